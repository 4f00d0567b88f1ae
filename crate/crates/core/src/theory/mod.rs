//! Closed-form design comparisons.

mod moments;

pub use moments::{
    compare_designs, compare_levels, population_moments, summarize, DesignComparison, EfficiencySummary,
    LevelComparison, PopulationMoments,
};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::optimal_weight_matrix;
use crate::error::{Error, Result};
use crate::fpstats::linalg::{spd_det, spd_inverse};
use crate::fpstats::special::{chisq_cdf, ln_gamma};

/// `p_K = 2 pi / (K + 2) * {2 pi^{K/2} / (K Gamma(K/2))}^{-2/K}`.
pub fn p_k(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("p_K needs K >= 1".into()));
    }
    let kf = k as f64;
    // log of 2 pi^{K/2} / (K Gamma(K/2))
    let ln_vol = std::f64::consts::LN_2 + kf / 2.0 * PI.ln() - kf.ln() - ln_gamma(kf / 2.0);
    Ok(2.0 * PI / (kf + 2.0) * (-2.0 / kf * ln_vol).exp())
}

/// Efficiency factor of the quadratic criterion `A` relative to Mahalanobis:
///
/// `nu(A) = b A^{-1} b' det(A)^{1/K} det(V_ss)^{1/K} / (b V_ss b')`, `b = V_ts V_ss^{-1}`.
pub fn nu(v_ts: &DVector<f64>, v_ss: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let k = v_ts.len();
    if v_ss.shape() != (k, k) || a.shape() != (k, k) {
        return Err(Error::Shape(format!("nu needs {k}x{k} matrices")));
    }
    let v_inv = spd_inverse(v_ss, "V_ss")?;
    let a_inv = spd_inverse(a, "criterion matrix")?;
    let b = &v_inv * v_ts;
    let denom = b.dot(&(v_ss * &b));
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("nu is undefined when the covariates explain nothing".into()));
    }
    let kf = k as f64;
    let det_term = (spd_det(a, "criterion matrix")?.ln() / kf + spd_det(v_ss, "V_ss")?.ln() / kf).exp();
    Ok(b.dot(&(&a_inv * &b)) * det_term / denom)
}

/// Mahalanobis correction `R2 p_K alpha^{2/K}`.
pub fn mahalanobis_expansion(r2: f64, k: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(r2 * p_k(k)? * alpha.powf(2.0 / k as f64))
}

/// Correction of the optimal weighted Euclidean criterion on orthogonalized
/// covariates: `K (prod R2_k)^{1/K} p_K alpha^{2/K}`.
pub fn orthogonal_optimal_expansion(r2: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let k = r2.len();
    if k == 0 {
        return Err(Error::Shape("need at least one R2".into()));
    }
    if r2.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("every per-covariate R2 must be positive".into()));
    }
    let kf = k as f64;
    let geo = (r2.iter().map(|r| r.ln()).sum::<f64>() / kf).exp();
    Ok(kf * geo * p_k(k)? * alpha.powf(2.0 / kf))
}

/// Correction under tiers: `sum_l R2_[l] p_{K_l} alpha_l^{2/K_l}`.
pub fn tier_expansion(r2: &[f64], k: &[usize], rates: &[f64]) -> Result<f64> {
    if r2.len() != k.len() || k.len() != rates.len() || k.is_empty() {
        return Err(Error::Shape("need one R2, one dimension and one rate per tier".into()));
    }
    let mut s = 0.0;
    for ((&r, &kl), &al) in r2.iter().zip(k).zip(rates) {
        check_alpha(al)?;
        s += r * p_k(kl)? * al.powf(2.0 / kl as f64);
    }
    Ok(s)
}

/// `var(L_{K,a}) = P(chi2_{K+2} <= a) / P(chi2_K <= a)`.
pub fn truncated_variance(k: usize, a: f64) -> Result<f64> {
    if k == 0 || !(a > 0.0) {
        return Err(Error::InvalidArgument("truncated variance needs K >= 1 and a > 0".into()));
    }
    if a.is_infinite() {
        return Ok(1.0);
    }
    Ok(chisq_cdf(a, k + 2) / chisq_cdf(a, k))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("acceptance rate must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Two correlated covariates with equal importance, `V_ss = [[4, d], [d, 4]]`
/// and `V_ts = (1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub delta: f64,
    pub nu_optimal: f64,
    pub nu_mahalanobis: f64,
    pub ratio: f64,
    /// `((4 - d) / (4 + d))^{1/2}`.
    pub closed_form: f64,
}

/// Optimal weighted Euclidean vs Mahalanobis for the correlated pair.
pub fn correlated_pair(delta: f64) -> Result<CorrelatedPair> {
    if !(delta.abs() < 4.0) {
        return Err(Error::InvalidArgument(format!("need |delta| < 4, got {delta}")));
    }
    let v_ss = DMatrix::from_row_slice(2, 2, &[4.0, delta, delta, 4.0]);
    let v_ts = DVector::from_vec(vec![1.0, 1.0]);
    let a_opt = optimal_weight_matrix(&v_ts, &v_ss)?;
    let nu_optimal = nu(&v_ts, &v_ss, &a_opt)?;
    let nu_mahalanobis = nu(&v_ts, &v_ss, &spd_inverse(&v_ss, "V_ss")?)?;
    Ok(CorrelatedPair {
        delta,
        nu_optimal,
        nu_mahalanobis,
        ratio: nu_optimal / nu_mahalanobis,
        closed_form: ((4.0 - delta) / (4.0 + delta)).sqrt(),
    })
}
