//! Finite-population moments, covariate preprocessing and numerical kernels.

pub mod linalg;
pub mod ortho;
pub mod population;
pub mod special;

pub use ortho::{gram_schmidt_upper, OrthoTransform};
pub use population::{center_columns, cov_f, finite_pop_cov, select_columns, var_f, ClusterExperiment};
pub use special::{chisq_cdf, chisq_quantile, normal_cdf, normal_quantile};
