use nalgebra::{DMatrix, DVector};

use super::criterion::check_rate;
use crate::error::{Error, Result};
use crate::fpstats::linalg::spd_solve;
use crate::theory::p_k;

/// Optimal weighted Euclidean matrix `diag(w)` with `w_k` proportional to
/// `(V_ts V_ss^{-1} xi_k)^2`, normalized so the weights multiply to one.
pub fn optimal_weight_matrix(v_ts: &DVector<f64>, v_ss: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = v_ts.len();
    if v_ss.shape() != (k, k) {
        return Err(Error::Shape(format!("V_ss is {}x{}, V_ts has {k} entries", v_ss.nrows(), v_ss.ncols())));
    }
    let rhs = DMatrix::from_column_slice(k, 1, v_ts.as_slice());
    let b = spd_solve(v_ss, &rhs, "V_ss")?;
    let scale = b.amax();
    if let Some(j) = b.iter().position(|v| !(v.abs() > 1e-12 * scale)) {
        return Err(Error::InvalidArgument(format!(
            "optimal weights need every regression coefficient nonzero; coefficient {} is zero",
            j + 1
        )));
    }
    let w: Vec<f64> = b.iter().map(|v| v * v).collect();
    let log_mean = w.iter().map(|v| v.ln()).sum::<f64>() / k as f64;
    let norm = log_mean.exp();
    Ok(DMatrix::from_diagonal(&DVector::from_iterator(k, w.iter().map(|v| v / norm))))
}

/// Tier acceptance rates `alpha_l = (c0 R2_l p_{K_l} / K_l)^{-K_l/2}` whose
/// product is `alpha`.
///
/// The constant `c0` has the closed form
/// `ln c0 = (-2 ln alpha - sum_l K_l ln(R2_l p_{K_l} / K_l)) / K`.
pub fn optimal_tier_rates(r2: &[f64], k: &[usize], alpha: f64) -> Result<Vec<f64>> {
    let alpha = check_rate(alpha)?;
    if r2.len() != k.len() || r2.is_empty() {
        return Err(Error::Shape("need one R2 and one dimension per tier".into()));
    }
    if r2.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("tier R2 values must be positive".into()));
    }
    if k.contains(&0) {
        return Err(Error::InvalidArgument("tier dimensions must be positive".into()));
    }
    let ktot: usize = k.iter().sum();
    let s: Vec<f64> = r2.iter().zip(k).map(|(&r, &kl)| Ok((r * p_k(kl)? / kl as f64).ln())).collect::<Result<_>>()?;
    let ln_c0 = (-2.0 * alpha.ln() - k.iter().zip(&s).map(|(&kl, sl)| kl as f64 * sl).sum::<f64>()) / ktot as f64;
    let rates: Vec<f64> = k.iter().zip(&s).map(|(&kl, sl)| (-(kl as f64) / 2.0 * (ln_c0 + sl)).exp()).collect();
    if let Some(l) = rates.iter().position(|&a| !(a < 1.0)) {
        return Err(Error::Infeasible(format!(
            "optimal rate for tier {} is {:.4} >= 1; merge tiers or raise alpha",
            l + 1,
            rates[l]
        )));
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_follow_squared_coefficients() {
        let w = optimal_weight_matrix(&DVector::from_vec(vec![1.0, 2.0]), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(w[(1, 1)] / w[(0, 0)], 4.0, max_relative = 1e-12);
        assert_relative_eq!(w[(0, 0)] * w[(1, 1)], 1.0, max_relative = 1e-12);
        let eq = optimal_weight_matrix(&DVector::from_vec(vec![3.0, 3.0, 3.0]), &DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(eq, DMatrix::identity(3, 3), epsilon = 1e-12);
        let one = optimal_weight_matrix(&DVector::from_vec(vec![0.7]), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_relative_eq!(one[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_coefficient_rejected() {
        let v = DMatrix::identity(2, 2);
        assert!(optimal_weight_matrix(&DVector::from_vec(vec![1.0, 0.0]), &v).is_err());
    }

    #[test]
    fn tier_rates_simple_cases() {
        let one = optimal_tier_rates(&[0.3], &[3], 0.01).unwrap();
        assert_relative_eq!(one[0], 0.01, max_relative = 1e-12);
        let two = optimal_tier_rates(&[0.2, 0.2], &[1, 1], 0.01).unwrap();
        assert_relative_eq!(two[0], 0.1, max_relative = 1e-12);
        assert_relative_eq!(two[1], 0.1, max_relative = 1e-12);
        let r = optimal_tier_rates(&[0.4, 0.1, 0.05], &[2, 1, 3], 0.001).unwrap();
        assert_relative_eq!(r.iter().product::<f64>(), 0.001, max_relative = 1e-10);
    }

    #[test]
    fn tier_rates_infeasible() {
        // a negligible tier would need a rate above one
        assert!(matches!(optimal_tier_rates(&[0.9, 1e-9], &[1, 1], 0.5), Err(Error::Infeasible(_))));
    }
}
