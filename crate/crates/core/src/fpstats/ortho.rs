//! Element-wise Gram-Schmidt orthogonalization of covariate columns.

use nalgebra::{DMatrix, DVector};

use super::population::center_columns;
use crate::error::{Error, Result};

/// Relative residual variance under which a column counts as collinear.
const COLLINEAR_RTOL: f64 = 1e-10;

/// Upper unit-triangular map `T` with `X T` having uncorrelated columns.
///
/// Column order is importance order: column 1 is kept as is, and column `k`
/// is replaced by its residual on columns `1..k`. The map is linear, so it can
/// be applied equally to unit-level covariates before aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoTransform {
    t: DMatrix<f64>,
    variances: DVector<f64>,
}

impl OrthoTransform {
    /// The upper triangular matrix `T`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Finite-population variances of the transformed columns.
    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Apply to any matrix with the same columns (`rows x K`).
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.dim() {
            return Err(Error::Shape(format!("expected {} columns, got {}", self.dim(), m.ncols())));
        }
        Ok(m * &self.t)
    }
}

/// Orthogonalize the columns of `x` (rows are clusters) in order.
///
/// `names` labels the columns in the rank-deficiency error.
pub fn gram_schmidt_upper(x: &DMatrix<f64>, names: &[String]) -> Result<OrthoTransform> {
    let (m, k) = x.shape();
    if m < 2 {
        return Err(Error::DegeneratePopulation(m));
    }
    let xc = center_columns(x);
    let denom = m as f64 - 1.0;
    let mut t = DMatrix::<f64>::identity(k, k);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut variances = DVector::zeros(k);
    for j in 0..k {
        let orig = xc.column(j).into_owned();
        let mut resid = orig.clone();
        let mut tcol = DVector::<f64>::zeros(k);
        tcol[j] = 1.0;
        for (i, u) in basis.iter().enumerate() {
            let coef = orig.dot(u) / (u.dot(u));
            resid -= u * coef;
            tcol -= t.column(i) * coef;
        }
        let v_orig = orig.dot(&orig) / denom;
        let v = resid.dot(&resid) / denom;
        if !(v > COLLINEAR_RTOL * v_orig) || v_orig == 0.0 {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {}", j + 1));
            return Err(Error::RankDeficient { column: j, name });
        }
        t.set_column(j, &tcol);
        variances[j] = v;
        basis.push(resid);
    }
    Ok(OrthoTransform { t, variances })
}
