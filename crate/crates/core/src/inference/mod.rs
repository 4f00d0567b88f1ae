//! Sampling the limiting law under rerandomization and building intervals.

mod improved;
mod interval;
mod law;
mod sampler;

pub use improved::{arm_cov, improved_variance_haj, improved_variance_ht, Components, ImprovedEstimates};
pub use interval::{
    confidence_interval, improved_interval, improved_interval_pooled, normal_interval, ConfidenceInterval,
    IntervalKind, IntervalMethod,
};
pub use law::{
    batch_quantile_se, law_quantile, AsymptoticLaw, ConstrainedPool, LawShape, DEFAULT_MC_SIZE, MIN_MC_SIZE,
};
pub use sampler::{
    sample_constrained_gaussian, sample_l, symmetric_truncated_normal, ConstrainedGaussian, SamplerKind, GIBBS_BURN_IN,
};
