//! Least squares with heteroskedasticity- and cluster-robust covariances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpstats::center_columns;

/// Relative size of a QR pivot below which a column is declared collinear.
const RANK_RTOL: f64 = 1e-10;

/// Small-sample correction of a sandwich covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// HC0 / CR0: no correction.
    #[default]
    None,
    /// HC1 `n/(n-p)` / CR1 `G/(G-1) (n-1)/(n-p)`.
    Df,
}

/// An ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub design: DMatrix<f64>,
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub bread: DMatrix<f64>,
}

impl RegressionFit {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// Position of a named coefficient.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Least squares of `y` on the columns of `design` via Householder QR.
///
/// Fails with the name of the first column that is (numerically) a linear
/// combination of the preceding ones.
pub fn fit_ols(design: DMatrix<f64>, y: &[f64], names: Vec<String>) -> Result<RegressionFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} design rows", y.len())));
    }
    if names.len() != p {
        return Err(Error::Shape(format!("{} names for {p} columns", names.len())));
    }
    if n < p {
        return Err(Error::RankDeficient { column: n, name: names[n].clone() });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = design.column(j).norm();
        if !(r[(j, j)].abs() > RANK_RTOL * norm.max(f64::MIN_POSITIVE)) || norm == 0.0 {
            return Err(Error::RankDeficient { column: j, name: names[j].clone() });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { column: p - 1, name: names[p - 1].clone() })?;
    let residuals = &yv - &design * &coefficients;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { column: p - 1, name: names[p - 1].clone() })?;
    let bread = &r_inv * r_inv.transpose();
    Ok(RegressionFit { design, names, coefficients, residuals, bread })
}

/// Interacted regression of `y` on `(1, Z, w, Z w)` with `w` re-centered.
///
/// The coefficient named `"Z"` estimates the average treatment effect.
pub fn fit_ols_interacted(y: &[f64], z: &[u8], w: &DMatrix<f64>, w_names: &[String]) -> Result<RegressionFit> {
    let n = y.len();
    if z.len() != n || w.nrows() != n {
        return Err(Error::Shape(format!("rows: y {n}, z {}, covariates {}", z.len(), w.nrows())));
    }
    if w_names.len() != w.ncols() {
        return Err(Error::Shape("covariate names do not match columns".into()));
    }
    let k = w.ncols();
    let wc = center_columns(w);
    let mut design = DMatrix::zeros(n, 2 + 2 * k);
    for i in 0..n {
        let zi = z[i] as f64;
        design[(i, 0)] = 1.0;
        design[(i, 1)] = zi;
        for j in 0..k {
            design[(i, 2 + j)] = wc[(i, j)];
            design[(i, 2 + k + j)] = zi * wc[(i, j)];
        }
    }
    let mut names = vec!["(Intercept)".to_string(), "Z".to_string()];
    names.extend(w_names.iter().cloned());
    names.extend(w_names.iter().map(|s| format!("Z:{s}")));
    fit_ols(design, y, names)
}

/// HW sandwich `(X'X)^{-1} (sum_i x_i x_i' e_i^2) (X'X)^{-1}`.
pub fn sandwich_hw(fit: &RegressionFit, correction: Correction) -> DMatrix<f64> {
    let (n, p) = fit.design.shape();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = fit.design.row(i);
        let e2 = fit.residuals[i] * fit.residuals[i];
        meat += row.transpose() * row * e2;
    }
    let v = &fit.bread * meat * &fit.bread;
    match correction {
        Correction::None => v,
        Correction::Df => v * (n as f64 / (n - p) as f64),
    }
}

/// LZ sandwich `(X'X)^{-1} (sum_g s_g s_g') (X'X)^{-1}` with `s_g = sum_{i in g} x_i e_i`.
///
/// `groups[i]` is the cluster of row `i`, labelled `0..G`.
pub fn sandwich_lz(fit: &RegressionFit, groups: &[usize], correction: Correction) -> Result<DMatrix<f64>> {
    let (n, p) = fit.design.shape();
    if groups.len() != n {
        return Err(Error::Shape(format!("{} cluster labels for {n} rows", groups.len())));
    }
    let g = groups.iter().copied().max().map_or(0, |v| v + 1);
    let mut scores = DMatrix::<f64>::zeros(g, p);
    for i in 0..n {
        let e = fit.residuals[i];
        for j in 0..p {
            scores[(groups[i], j)] += fit.design[(i, j)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let v = &fit.bread * meat * &fit.bread;
    Ok(match correction {
        Correction::None => v,
        Correction::Df => {
            let used = {
                let mut seen = vec![false; g];
                groups.iter().for_each(|&c| seen[c] = true);
                seen.iter().filter(|&&s| s).count()
            };
            if used < 2 {
                return Err(Error::InvalidArgument("CR1 needs at least two clusters".into()));
            }
            let gf = used as f64;
            v * (gf / (gf - 1.0) * (n as f64 - 1.0) / (n - p) as f64)
        }
    })
}
