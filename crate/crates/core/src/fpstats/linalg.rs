//! Small dense linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a symmetric matrix counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("{what}: expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// Fails rather than regularizing when the factorization breaks down.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = m.diagonal().amax();
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularCovariance(what.to_string()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v * v));
    if !(min_pivot > SINGULAR_RTOL * scale) {
        return Err(Error::SingularCovariance(what.to_string()));
    }
    Ok(chol.inverse())
}

/// Solve `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularCovariance(what.to_string()))?;
    Ok(chol.solve(rhs))
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

fn spectral_map(m: &DMatrix<f64>, what: &str, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    let (values, vectors) = sym_eigen(m);
    let top = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if values.iter().any(|&v| !(v > SINGULAR_RTOL * top.max(f64::MIN_POSITIVE))) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    let mapped = DMatrix::from_diagonal(&values.map(f));
    Ok(&vectors * mapped * vectors.transpose())
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spectral_map(m, what, f64::sqrt)
}

/// Symmetric inverse square root of an SPD matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spectral_map(m, what, |v| 1.0 / v.sqrt())
}

/// Determinant of an SPD matrix via Cholesky.
pub fn spd_det(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    check_square(m, what)?;
    let chol = m.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(chol.l().diagonal().iter().map(|d| d * d).product())
}

/// `a^T m^{-1} a` for a vector `a` and SPD `m`.
pub fn inverse_quadratic_form(m: &DMatrix<f64>, a: &DVector<f64>, what: &str) -> Result<f64> {
    let rhs = DMatrix::from_column_slice(a.len(), 1, a.as_slice());
    let sol = spd_solve(m, &rhs, what)?;
    Ok(a.dot(&sol.column(0)))
}
