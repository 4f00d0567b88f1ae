use rand::Rng;
use serde::{Deserialize, Serialize};

use super::improved::ImprovedEstimates;
use super::law::{check_level, ConstrainedPool, LawShape};
use crate::error::{Error, Result};
use crate::estimate::EstimateReport;
use crate::fpstats::special::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Normal,
    Improved,
}

/// A two-sided interval of nominal coverage `1 - level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub kind: IntervalKind,
}

impl ConfidenceInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.lower <= tau && tau <= self.upper
    }
}

/// Wald interval `tau_hat +- z_{1 - level/2} se`.
pub fn normal_interval(report: &EstimateReport, level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let q = normal_quantile(1.0 - level / 2.0);
    Ok(ConfidenceInterval {
        lower: report.tau_hat - q * report.se,
        upper: report.tau_hat + q * report.se,
        level,
        kind: IntervalKind::Normal,
    })
}

/// Interval `tau_hat + (V_hat / M)^{1/2} q` with `q` the law quantiles,
/// reusing the draws in `pool`.
pub fn improved_interval_pooled(
    est: &ImprovedEstimates,
    m: usize,
    pool: &ConstrainedPool,
    level: f64,
) -> Result<ConfidenceInterval> {
    if m == 0 {
        return Err(Error::InvalidArgument("number of clusters must be positive".into()));
    }
    let half = pool.half_width(est.r2_hat, &est.mu(), level)? * (est.v_hat / m as f64).sqrt();
    Ok(ConfidenceInterval { lower: est.tau_hat - half, upper: est.tau_hat + half, level, kind: IntervalKind::Improved })
}

/// Improved interval with fresh Monte Carlo draws of size `mc_size`.
pub fn improved_interval<R: Rng + ?Sized>(
    est: &ImprovedEstimates,
    m: usize,
    shape: &LawShape,
    level: f64,
    mc_size: usize,
    rng: &mut R,
) -> Result<ConfidenceInterval> {
    check_level(level)?;
    if est.mu_hat.len() != shape.dim() {
        return Err(Error::Shape("estimates and constraint differ in dimension".into()));
    }
    let pool = ConstrainedPool::new(shape, mc_size, rng)?;
    improved_interval_pooled(est, m, &pool, level)
}

/// How to build an interval.
pub enum IntervalMethod<'a> {
    Normal,
    Improved { estimates: &'a ImprovedEstimates, shape: &'a LawShape, m: usize },
}

/// Interval of either kind around a report.
pub fn confidence_interval<R: Rng + ?Sized>(
    report: &EstimateReport,
    method: IntervalMethod<'_>,
    level: f64,
    mc_size: usize,
    rng: &mut R,
) -> Result<ConfidenceInterval> {
    match method {
        IntervalMethod::Normal => normal_interval(report, level),
        IntervalMethod::Improved { estimates, shape, m } => improved_interval(estimates, m, shape, level, mc_size, rng),
    }
}
