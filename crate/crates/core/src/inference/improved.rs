//! Variance, `R2` and direction estimates that account for the balance constraint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::estimate::{fit_for, Estimator};
use crate::fpstats::linalg::{spd_inverse, sym_inv_sqrt};
use crate::fpstats::{finite_pop_cov, ClusterExperiment};

/// Ingredients of the improved interval for one assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImprovedEstimates {
    pub estimator: Estimator,
    pub tau_hat: f64,
    /// Estimate of the asymptotic variance of `M^{1/2} (tau_hat - tau)`.
    pub v_hat: f64,
    /// `R2` after clipping to `[0, 1]`.
    pub r2_hat: f64,
    pub r2_raw: f64,
    pub mu_hat: Vec<f64>,
    pub v_clipped: bool,
    pub r2_clipped: bool,
    pub components: Components,
}

/// Arm-wise pieces behind the estimates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Components {
    /// `var_{f,1}` and `var_{f,0}` of the residual totals.
    pub var1: f64,
    pub var0: f64,
    /// Projection of the arm difference on the design and analysis covariates.
    pub projection: f64,
    /// Numerator of `R2`.
    pub explained: f64,
    /// `cov_{f,z}(residual, design covariates)`.
    pub cov1: Vec<f64>,
    pub cov0: Vec<f64>,
}

impl ImprovedEstimates {
    pub fn mu(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu_hat)
    }
}

/// Hajek side: residuals of the individual-level regression on `w_cols`,
/// projected on the design covariates `design` (scaled cluster totals, one
/// row per cluster, in the criterion's coordinates) and on `W~`.
pub fn improved_variance_haj(
    exp: &ClusterExperiment,
    z: &Assignment,
    y: &[f64],
    w_cols: &[usize],
    design: &DMatrix<f64>,
) -> Result<ImprovedEstimates> {
    let est = if w_cols.is_empty() { Estimator::Haj } else { Estimator::HajAdj };
    let fit = fit_for(exp, z, y, Estimator::HajAdj, w_cols)?;
    let u = exp.scaled_cluster_totals(fit.residuals.as_slice())?;
    let w = exp.x_tilde(w_cols)?;
    let g = union_columns(design, &w);
    core(est, fit.coefficients[1], &u, z, &g, design)
}

/// Horvitz-Thompson side: residuals of the cluster-level regression on
/// `v_cols`, projected on the design covariates.
pub fn improved_variance_ht(
    exp: &ClusterExperiment,
    z: &Assignment,
    y: &[f64],
    v_cols: &[usize],
    design: &DMatrix<f64>,
) -> Result<ImprovedEstimates> {
    let est = if v_cols.is_empty() { Estimator::Ht } else { Estimator::HtAdj };
    let fit = fit_for(exp, z, y, Estimator::HtAdj, v_cols)?;
    core(est, fit.coefficients[1], &fit.residuals, z, design, design)
}

fn core(
    estimator: Estimator,
    tau_hat: f64,
    resid: &DVector<f64>,
    z: &Assignment,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<ImprovedEstimates> {
    let m = z.m();
    if resid.len() != m || g.nrows() != m || x.nrows() != m {
        return Err(Error::Shape("residuals and covariates must have one row per cluster".into()));
    }
    let k = x.ncols();
    if k == 0 {
        return Err(Error::InvalidArgument("improved inference needs design covariates".into()));
    }
    let e1 = z.m1() as f64 / m as f64;
    let e0 = 1.0 - e1;
    let r = DMatrix::from_column_slice(m, 1, resid.as_slice());

    let var1 = arm_cov(&r, &r, z, 1)?[(0, 0)];
    let var0 = arm_cov(&r, &r, z, 0)?[(0, 0)];

    let dg = arm_cov(&r, g, z, 1)? - arm_cov(&r, g, z, 0)?;
    let g_inv = spd_inverse(&finite_pop_cov(g, g)?, "design and analysis covariates")?;
    let proj_g = (&dg * &g_inv * dg.transpose())[(0, 0)];
    let v_raw = var1 / e1 + var0 / e0 - proj_g;

    let c1 = arm_cov(&r, x, z, 1)?;
    let c0 = arm_cov(&r, x, z, 0)?;
    let s1 = spd_inverse(&arm_cov(x, x, z, 1)?, "treated-arm design covariates")?;
    let s0 = spd_inverse(&arm_cov(x, x, z, 0)?, "control-arm design covariates")?;
    let sxx = finite_pop_cov(x, x)?;
    let x_inv = spd_inverse(&sxx, "design covariates")?;
    let dx = &c1 - &c0;
    let numer = (&c1 * &s1 * c1.transpose())[(0, 0)] / e1 + (&c0 * &s0 * c0.transpose())[(0, 0)] / e0
        - (&dx * &x_inv * dx.transpose())[(0, 0)];

    let v_clipped = !(v_raw > 0.0);
    let v_hat = v_raw.max(0.0);
    let r2_raw = if v_hat > 0.0 { numer / v_hat } else { 0.0 };
    let r2_hat = r2_raw.clamp(0.0, 1.0);
    let r2_clipped = v_clipped || r2_hat != r2_raw;

    let v_xx = sxx / (e1 * e0);
    let v_tx = (&c1 / e1 + &c0 / e0).transpose();
    let dir = sym_inv_sqrt(&v_xx, "design covariates")? * v_tx;
    let norm = dir.norm();
    let mu_hat: Vec<f64> = if norm > 0.0 && norm.is_finite() {
        dir.iter().map(|v| v / norm).collect()
    } else {
        (0..k).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect()
    };
    let components = Components {
        var1,
        var0,
        projection: proj_g,
        explained: numer,
        cov1: c1.iter().copied().collect(),
        cov0: c0.iter().copied().collect(),
    };
    Ok(ImprovedEstimates { estimator, tau_hat, v_hat, r2_hat, r2_raw, mu_hat, v_clipped, r2_clipped, components })
}

/// Within-arm covariance with divisor `M_z - 1`.
pub fn arm_cov(a: &DMatrix<f64>, b: &DMatrix<f64>, z: &Assignment, arm: u8) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = (0..z.m()).filter(|&i| z.z()[i] == arm).collect();
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("arm {arm} needs at least two clusters")));
    }
    let sa = a.select_rows(&rows);
    let sb = b.select_rows(&rows);
    finite_pop_cov(&sa, &sb)
}

/// Columns of `base` followed by those of `extra` not already in its span.
fn union_columns(base: &DMatrix<f64>, extra: &DMatrix<f64>) -> DMatrix<f64> {
    let center = |v: DVector<f64>| {
        let mean = v.mean();
        v.add_scalar(-mean)
    };
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let push = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>| -> bool {
        let norm = v.norm();
        let mut r = v;
        for q in basis.iter() {
            let c = q.dot(&r);
            r -= q * c;
        }
        let rn = r.norm();
        if rn > 1e-8 * norm && norm > 0.0 {
            basis.push(r / rn);
            true
        } else {
            false
        }
    };
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for c in base.column_iter() {
        push(center(c.into_owned()), &mut basis);
        cols.push(c.into_owned());
    }
    for c in extra.column_iter() {
        if push(center(c.into_owned()), &mut basis) {
            cols.push(c.into_owned());
        }
    }
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn arm_cov_hand_value() {
        let z = Assignment::new(vec![1, 1, 1, 0, 0, 0]).unwrap();
        let a = DMatrix::from_column_slice(6, 1, &[1., 2., 3., 10., 10., 40.]);
        assert_relative_eq!(arm_cov(&a, &a, &z, 1).unwrap()[(0, 0)], 1.0);
        assert_relative_eq!(arm_cov(&a, &a, &z, 0).unwrap()[(0, 0)], 300.0);
    }

    #[test]
    fn union_drops_duplicates_and_spanned_columns() {
        let base = DMatrix::from_column_slice(4, 1, &[1., 2., 0., 5.]);
        let extra = DMatrix::from_column_slice(4, 3, &[1., 2., 0., 5., 2., 4., 0., 10., 1., 0., 0., 0.]);
        let g = union_columns(&base, &extra);
        assert_eq!(g.ncols(), 2);
    }

    #[test]
    fn noise_free_outcome_has_zero_variance() {
        // residuals exactly linear in the design covariate: nothing left after projection
        let m = 8;
        let x = DMatrix::from_column_slice(m, 1, &[-3., -1., 0., 2., 1., 4., -2., -1.]);
        let resid = DVector::from_column_slice(&[0.0; 8]);
        let z = Assignment::new(vec![1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
        let e = core(Estimator::Ht, 0.0, &resid, &z, &x, &x).unwrap();
        assert_eq!(e.v_hat, 0.0);
        assert_eq!(e.r2_hat, 0.0);
        assert_relative_eq!(DVector::from_vec(e.mu_hat).norm(), 1.0);
    }
}
