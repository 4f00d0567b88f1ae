//! Population moments of the estimators and design efficiency summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{nu, p_k, tier_expansion};
use crate::design::{optimal_tier_rates, BalanceCriterion, Level};
use crate::error::{Error, Result};
use crate::estimate::fit_ols;
use crate::fpstats::linalg::spd_inverse;
use crate::fpstats::special::chisq_cdf;
use crate::fpstats::{finite_pop_cov, gram_schmidt_upper, select_columns, var_f, ClusterExperiment};

/// Joint limiting moments of `M^{1/2} (tau_hat - tau, d)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationMoments {
    pub level: Level,
    pub v_tt: f64,
    pub v_ts: Vec<f64>,
    pub v_ss: Vec<Vec<f64>>,
    /// `V_ts V_ss^{-1} V_st / V_tt`.
    pub r2: f64,
    /// Same quantity from the residual variance of a regression.
    pub r2_regression: f64,
    /// `V_tt (1 - R2)` from the regression residuals.
    pub residual_variance: f64,
}

impl PopulationMoments {
    pub fn v_ts_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.v_ts)
    }

    pub fn v_ss_matrix(&self) -> DMatrix<f64> {
        let k = self.v_ts.len();
        DMatrix::from_fn(k, k, |i, j| self.v_ss[i][j])
    }
}

/// Per-arm outcome vectors entering the moments: `Y~(z)` for the cluster
/// level, `eps~(z)` (scaled totals of `Y_ij(z) - Ybar(z)`) for the unit level,
/// each optionally adjusted by the population regression on `adjust`.
fn arm_outcomes(exp: &ClusterExperiment, level: Level, adjust: &[usize]) -> Result<[DVector<f64>; 2]> {
    let (y0, y1) = exp
        .potential_outcomes()
        .ok_or_else(|| Error::MissingData("population moments need both potential outcomes".into()))?;
    let mut out = [DVector::zeros(exp.m()), DVector::zeros(exp.m())];
    for (z, y) in [y0, y1].into_iter().enumerate() {
        out[z] = match level {
            Level::Cluster => {
                let yt = exp.scaled_cluster_totals(y)?;
                if adjust.is_empty() {
                    yt
                } else {
                    residualize(yt.as_slice(), &exp.c_cols(adjust)?)?
                }
            }
            Level::Individual => {
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                let eps: Vec<f64> = y.iter().map(|v| v - mean).collect();
                let eps = if adjust.is_empty() {
                    DVector::from_vec(eps)
                } else {
                    residualize(&eps, &select_columns(exp.x(), adjust, "x")?)?
                };
                exp.scaled_cluster_totals(eps.as_slice())?
            }
        };
    }
    Ok(out)
}

/// Residuals of `y` on `(1, w)` plus the mean of `y`.
fn residualize(y: &[f64], w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let fit = regress(y, w)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok(fit.add_scalar(mean))
}

/// Residuals of `y` on an intercept and the columns of `w`.
fn regress(y: &[f64], w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = y.len();
    let mut design = DMatrix::from_element(n, w.ncols() + 1, 1.0);
    design.view_mut((0, 1), (n, w.ncols())).copy_from(w);
    let mut names = vec!["(Intercept)".to_string()];
    names.extend((0..w.ncols()).map(|j| format!("s{}", j + 1)));
    Ok(fit_ols(design, y, names)?.residuals)
}

/// Moments for an estimator at `level` and design covariates `s` (one row per
/// cluster), with `m1` treated clusters. `adjust` lists the analysis
/// covariates of a regression-adjusted estimator.
pub fn population_moments(
    exp: &ClusterExperiment,
    level: Level,
    s: &DMatrix<f64>,
    m1: usize,
    adjust: &[usize],
) -> Result<PopulationMoments> {
    let m = exp.m();
    if s.nrows() != m {
        return Err(Error::Shape(format!("design covariates have {} rows for {m} clusters", s.nrows())));
    }
    if m1 == 0 || m1 >= m {
        return Err(Error::InvalidArgument("both arms must be nonempty".into()));
    }
    let e1 = m1 as f64 / m as f64;
    let e0 = 1.0 - e1;
    let [y0, y1] = arm_outcomes(exp, level, adjust)?;
    let diff = &y1 - &y0;
    let v_tt = var_f(y1.as_slice())? / e1 + var_f(y0.as_slice())? / e0 - var_f(diff.as_slice())?;

    let col = |v: &DVector<f64>| DMatrix::from_column_slice(m, 1, v.as_slice());
    let v_ts = (finite_pop_cov(&col(&y1), s)? / e1 + finite_pop_cov(&col(&y0), s)? / e0).transpose();
    let v_ss = finite_pop_cov(s, s)? / (e1 * e0);
    let explained = (v_ts.transpose() * spd_inverse(&v_ss, "design covariates")? * &v_ts)[(0, 0)];
    let r2 = if v_tt > 0.0 { explained / v_tt } else { 0.0 };

    // e0 Y(1) + e1 Y(0) has variance e1 e0 V_tt; its residual on S gives V_tt (1 - R2)
    let h = &y1 * e0 + &y0 * e1;
    let resid = regress(h.as_slice(), s)?;
    let residual_variance = resid.norm_squared() / (m as f64 - 1.0) / (e1 * e0);
    let total = var_f(h.as_slice())? / (e1 * e0);
    let r2_regression = if total > 0.0 { 1.0 - residual_variance / total } else { 0.0 };

    let k = s.ncols();
    Ok(PopulationMoments {
        level,
        v_tt,
        v_ts: v_ts.iter().copied().collect(),
        v_ss: (0..k).map(|i| (0..k).map(|j| v_ss[(i, j)]).collect()).collect(),
        r2,
        r2_regression,
        residual_variance,
    })
}

/// Leading-order variance of one design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub label: String,
    pub level: Level,
    pub k: usize,
    pub alpha: f64,
    pub v_tt: f64,
    pub r2: f64,
    pub nu: f64,
    pub p_k: f64,
    /// `V {(1 - R2) + correction}` with the Mahalanobis, quadratic or tier correction.
    pub leading_variance: f64,
    /// Shares of `R2` of the Gram-Schmidt orthogonalized covariates.
    pub per_covariate_r2: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_tier_r2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tier_rates: Option<Vec<f64>>,
}

/// Efficiency of rerandomizing with `crit` at overall acceptance rate `alpha`.
///
/// Tier rates come from the criterion's thresholds when set, otherwise from
/// the optimal allocation.
pub fn summarize(
    exp: &ClusterExperiment,
    label: &str,
    crit: &BalanceCriterion,
    alpha: f64,
) -> Result<EfficiencySummary> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("acceptance rate must lie in (0, 1), got {alpha}")));
    }
    let s = crit.design_covariates();
    let mom = population_moments(exp, crit.level(), s, crit.m1(), &[])?;
    let k = crit.dim();
    let pk = p_k(k)?;
    let per_covariate_r2 = orthogonal_shares(&mom, s, crit)?;
    let nu_a = if mom.r2 > 0.0 { nu(&mom.v_ts_vector(), &mom.v_ss_matrix(), crit.matrix())? } else { 1.0 };

    let (correction, per_tier_r2, tier_rates) = if crit.has_tiers() {
        let layout = crit.tier_layout();
        let kl: Vec<usize> = layout.iter().map(|t| t.len()).collect();
        let mut shares = Vec::with_capacity(layout.len());
        let mut pos = 0;
        for t in &layout {
            shares.push(per_covariate_r2[pos..pos + t.len()].iter().sum::<f64>());
            pos += t.len();
        }
        let thresholds = crit.tier_thresholds();
        let rates = if thresholds.iter().all(|a| a.is_finite()) {
            thresholds.iter().zip(&kl).map(|(&a, &kk)| chisq_cdf(a, kk)).collect()
        } else {
            let ktot = k as f64;
            optimal_tier_rates(&shares, &kl, alpha)
                .unwrap_or_else(|_| kl.iter().map(|&kk| alpha.powf(kk as f64 / ktot)).collect())
        };
        (tier_expansion(&shares, &kl, &rates)?, Some(shares), Some(rates))
    } else {
        (mom.r2 * pk * nu_a * alpha.powf(2.0 / k as f64), None, None)
    };
    Ok(EfficiencySummary {
        label: label.to_string(),
        level: crit.level(),
        k,
        alpha,
        v_tt: mom.v_tt,
        r2: mom.r2,
        nu: nu_a,
        p_k: pk,
        leading_variance: mom.v_tt * (1.0 - mom.r2 + correction),
        per_covariate_r2,
        per_tier_r2,
        tier_rates,
    })
}

/// `R2_k` of the sequentially orthogonalized design covariates; they sum to `R2`.
fn orthogonal_shares(mom: &PopulationMoments, s: &DMatrix<f64>, crit: &BalanceCriterion) -> Result<Vec<f64>> {
    let t = gram_schmidt_upper(s, crit.names())?;
    let v_ss = mom.v_ss_matrix();
    let v_ts = mom.v_ts_vector();
    let tm = t.matrix();
    let vt = tm.transpose() * v_ts;
    let vv = tm.transpose() * v_ss * tm;
    Ok((0..vt.len()).map(|k| if mom.v_tt > 0.0 { vt[k] * vt[k] / (vv[(k, k)] * mom.v_tt) } else { 0.0 }).collect())
}

/// `V_haj (1 - R2_x)` against `V_ht (1 - R2_c)` with `c = (n, x~)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelComparison {
    pub haj_residual_variance: f64,
    pub ht_residual_variance: f64,
    pub holds: bool,
}

/// Compare Hajek with all unit covariates against Horvitz-Thompson with
/// cluster covariates `(n_i, x~_i)`, through regression residual variances.
pub fn compare_levels(exp: &ClusterExperiment, m1: usize) -> Result<LevelComparison> {
    let kx = exp.x().ncols();
    if kx == 0 {
        return Err(Error::InvalidArgument("the comparison needs unit-level covariates".into()));
    }
    let xt = exp.x_tilde(&(0..kx).collect::<Vec<_>>())?;
    let c = exp.size_and_totals()?;
    let haj = population_moments(exp, Level::Individual, &xt, m1, &[])?;
    let ht = population_moments(exp, Level::Cluster, &c, m1, &[])?;
    let slack = 1e-10 * haj.residual_variance.abs().max(ht.residual_variance.abs()).max(1e-300);
    Ok(LevelComparison {
        haj_residual_variance: haj.residual_variance,
        ht_residual_variance: ht.residual_variance,
        holds: haj.residual_variance + slack >= ht.residual_variance,
    })
}

/// Summaries for several criteria on one population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignComparison {
    pub rows: Vec<EfficiencySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_check: Option<LevelComparison>,
}

pub fn compare_designs(
    exp: &ClusterExperiment,
    criteria: &[(String, BalanceCriterion)],
    alpha: f64,
) -> Result<DesignComparison> {
    if exp.potential_outcomes().is_none() {
        return Err(Error::MissingData("design comparisons need potential outcomes".into()));
    }
    let rows = criteria.iter().map(|(label, crit)| summarize(exp, label, crit, alpha)).collect::<Result<Vec<_>>>()?;
    let level_check = match criteria.first() {
        Some((_, crit)) if exp.x().ncols() > 0 => Some(compare_levels(exp, crit.m1())?),
        _ => None,
    };
    Ok(DesignComparison { rows, level_check })
}
