//! Point estimators of the average treatment effect and their robust variances.

mod ols;

pub use ols::{fit_ols, fit_ols_interacted, sandwich_hw, sandwich_lz, Correction, RegressionFit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::fpstats::{select_columns, ClusterExperiment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ht,
    Haj,
    HtAdj,
    HajAdj,
}

impl Estimator {
    pub fn is_adjusted(self) -> bool {
        matches!(self, Estimator::HtAdj | Estimator::HajAdj)
    }

    /// True for the cluster-level (Horvitz-Thompson family) estimators.
    pub fn is_cluster_level(self) -> bool {
        matches!(self, Estimator::Ht | Estimator::HtAdj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeFlavor {
    /// Heteroskedasticity-robust, cluster-level regression.
    Hw,
    /// Cluster-robust, individual-level regression.
    Lz,
    Improved,
}

/// A point estimate with its variance on the estimator's own scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: Estimator,
    pub tau_hat: f64,
    /// Estimated variance of `tau_hat` (already divided by `M`).
    pub variance_hat: f64,
    pub se: f64,
    pub se_flavor: SeFlavor,
    pub correction: Correction,
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub fit: Option<RegressionFit>,
}

fn check_inputs(exp: &ClusterExperiment, z: &Assignment, y: &[f64]) -> Result<()> {
    if z.m() != exp.m() {
        return Err(Error::Shape(format!("assignment has {} clusters, population {}", z.m(), exp.m())));
    }
    if y.len() != exp.n_units() {
        return Err(Error::Shape(format!("{} outcomes for {} units", y.len(), exp.n_units())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingData("observed outcomes contain non-finite values".into()));
    }
    Ok(())
}

/// Horvitz-Thompson estimator `M1^{-1} sum Z_i Y~_i - M0^{-1} sum (1 - Z_i) Y~_i`.
pub fn tau_ht(exp: &ClusterExperiment, z: &Assignment, y: &[f64]) -> Result<f64> {
    check_inputs(exp, z, y)?;
    let yt = exp.scaled_cluster_totals(y)?;
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in 0..exp.m() {
        if z.is_treated(i) {
            s1 += yt[i];
        } else {
            s0 += yt[i];
        }
    }
    Ok(s1 / z.m1() as f64 - s0 / z.m0() as f64)
}

/// Hajek estimator: difference of the unit-level arm means.
pub fn tau_haj(exp: &ClusterExperiment, z: &Assignment, y: &[f64]) -> Result<f64> {
    check_inputs(exp, z, y)?;
    let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (i, w) in exp.offsets().windows(2).enumerate() {
        let s: f64 = y[w[0]..w[1]].iter().sum();
        if z.is_treated(i) {
            s1 += s;
            n1 += w[1] - w[0];
        } else {
            s0 += s;
            n0 += w[1] - w[0];
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::InvalidArgument("an arm has no units".into()));
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Unit-level treatment indicator.
pub fn unit_treatment(exp: &ClusterExperiment, z: &Assignment) -> Vec<u8> {
    let mut out = Vec::with_capacity(exp.n_units());
    for (i, &s) in exp.sizes().iter().enumerate() {
        out.extend(std::iter::repeat_n(z.z()[i], s));
    }
    out
}

/// Fit the regression behind an estimator.
///
/// Cluster-level estimators regress `Y~_i` on `(1, Z_i, v_i, Z_i v_i)` with
/// `v` the listed cluster covariates; individual-level ones regress `Y_ij`
/// on `(1, Z_ij, w_ij, Z_ij w_ij)` with `w` the listed individual covariates.
/// Unadjusted estimators use no covariates and reproduce `tau_ht`/`tau_haj`.
pub fn fit_for(
    exp: &ClusterExperiment,
    z: &Assignment,
    y: &[f64],
    estimator: Estimator,
    cols: &[usize],
) -> Result<RegressionFit> {
    check_inputs(exp, z, y)?;
    let cols: &[usize] = if estimator.is_adjusted() { cols } else { &[] };
    if estimator.is_cluster_level() {
        let yt = exp.scaled_cluster_totals(y)?;
        let v = exp.c_cols(cols)?;
        let names: Vec<String> = cols.iter().map(|&c| exp.c_names()[c].clone()).collect();
        fit_ols_interacted(yt.as_slice(), z.z(), &v, &names)
    } else {
        let zu = unit_treatment(exp, z);
        let w: DMatrix<f64> = select_columns(exp.x(), cols, "x")?;
        let names: Vec<String> = cols.iter().map(|&c| exp.x_names()[c].clone()).collect();
        fit_ols_interacted(y, &zu, &w, &names)
    }
}

/// Point estimate with the matching robust variance: HW for cluster-level
/// regressions, LZ for individual-level ones.
pub fn estimate(
    exp: &ClusterExperiment,
    z: &Assignment,
    y: &[f64],
    estimator: Estimator,
    cols: &[usize],
    correction: Correction,
) -> Result<EstimateReport> {
    let fit = fit_for(exp, z, y, estimator, cols)?;
    let (cov, flavor) = if estimator.is_cluster_level() {
        (sandwich_hw(&fit, correction), SeFlavor::Hw)
    } else {
        (sandwich_lz(&fit, &exp.unit_clusters(), correction)?, SeFlavor::Lz)
    };
    let variance_hat = cov[(1, 1)].max(0.0);
    let tau_hat = match estimator {
        Estimator::Ht => tau_ht(exp, z, y)?,
        Estimator::Haj => tau_haj(exp, z, y)?,
        _ => fit.coefficients[1],
    };
    Ok(EstimateReport {
        estimator,
        tau_hat,
        variance_hat,
        se: variance_hat.sqrt(),
        se_flavor: flavor,
        correction,
        coefficient_names: fit.names.clone(),
        coefficients: fit.coefficients.iter().copied().collect(),
        fit: Some(fit),
    })
}
