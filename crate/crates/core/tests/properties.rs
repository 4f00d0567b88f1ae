use clusterre::design::{balance_statistic, Assignment, BalanceCriterion, Level};
use clusterre::estimate::{estimate, fit_ols, sandwich_hw, sandwich_lz, tau_haj, tau_ht, Correction, Estimator};
use clusterre::fpstats::{cov_f, var_f, ClusterExperiment};
use clusterre::theory::{orthogonal_optimal_expansion, p_k, tier_expansion};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn experiment(sizes: Vec<usize>, x: Vec<f64>, kx: usize) -> ClusterExperiment {
    let n: usize = sizes.iter().sum();
    let m = sizes.len();
    let e = ClusterExperiment::new(sizes, DMatrix::from_row_slice(n, kx, &x[..n * kx]), DMatrix::zeros(m, 0)).unwrap();
    let c = e.size_and_totals().unwrap();
    let mut names = vec!["n".to_string()];
    names.extend((1..=kx).map(|j| format!("x{j}")));
    let mut e = e;
    e.set_cluster_covariates(c, names).unwrap();
    e
}

/// All `m1`-subsets of `0..m`.
fn subsets(m: usize, m1: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m)
        .filter(|b| b.count_ones() as usize == m1)
        .map(|b| (0..m).filter(|i| b >> i & 1 == 1).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn var_f_shift_and_scale(v in prop::collection::vec(-50.0..50.0f64, 2..30), s in -10.0..10.0f64, k in 0.1..5.0f64) {
        let base = var_f(&v).unwrap();
        let moved: Vec<f64> = v.iter().map(|x| k * x + s).collect();
        prop_assert!((var_f(&moved).unwrap() - k * k * base).abs() <= 1e-9 * (1.0 + k * k * base));
        prop_assert!((cov_f(&v, &v).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn ht_unbiased_over_all_assignments(
        sizes in prop::collection::vec(1usize..5, 3..8),
        seed in prop::collection::vec(-5.0..5.0f64, 80),
        m1_frac in 0.2..0.8f64,
    ) {
        let m = sizes.len();
        let m1 = ((m as f64 * m1_frac).round() as usize).clamp(1, m - 1);
        let n: usize = sizes.iter().sum();
        let y0: Vec<f64> = seed[..n].to_vec();
        let y1: Vec<f64> = seed[n..2 * n].iter().map(|v| v * 2.0 + 1.0).collect();
        let exp = ClusterExperiment::new(sizes, DMatrix::zeros(n, 0), DMatrix::zeros(m, 0))
            .unwrap()
            .with_potential_outcomes(y0, y1)
            .unwrap();
        let all = subsets(m, m1);
        let avg = all
            .iter()
            .map(|t| {
                let z = Assignment::from_treated(m, t).unwrap();
                tau_ht(&exp, &z, &exp.reveal(z.z()).unwrap()).unwrap()
            })
            .sum::<f64>() / all.len() as f64;
        let tau = exp.tau().unwrap();
        prop_assert!((avg - tau).abs() < 1e-10, "{} vs {}", avg, tau);
    }

    #[test]
    fn equal_sizes_make_hajek_and_ht_agree(
        size in 1usize..6,
        treated in prop::collection::vec(any::<bool>(), 4..12),
        y in prop::collection::vec(-20.0..20.0f64, 72),
    ) {
        let m = treated.len();
        prop_assume!(treated.iter().any(|&t| t) && treated.iter().any(|&t| !t));
        let n = m * size;
        let exp = ClusterExperiment::new(vec![size; m], DMatrix::zeros(n, 0), DMatrix::zeros(m, 0)).unwrap();
        let z = Assignment::new(treated.iter().map(|&t| t as u8).collect()).unwrap();
        let (a, b) = (tau_haj(&exp, &z, &y[..n]).unwrap(), tau_ht(&exp, &z, &y[..n]).unwrap());
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn singleton_clusters_reduce_lz_to_hw(x in prop::collection::vec(-3.0..3.0f64, 40), e in prop::collection::vec(-2.0..2.0f64, 20)) {
        let n = 20;
        let design = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { x[2 * i + j - 1] });
        let y: Vec<f64> = (0..n).map(|i| 1.0 + design[(i, 1)] - design[(i, 2)] + e[i]).collect();
        let fit = fit_ols(design, &y, vec!["1".into(), "a".into(), "b".into()]).unwrap();
        let groups: Vec<usize> = (0..n).collect();
        let gap = (sandwich_lz(&fit, &groups, Correction::None).unwrap() - sandwich_hw(&fit, Correction::None)).amax();
        prop_assert!(gap < 1e-10);
    }

    #[test]
    fn mahalanobis_statistic_is_affine_invariant(
        sizes in prop::collection::vec(1usize..5, 8..14),
        x in prop::collection::vec(-3.0..3.0f64, 140),
        b in prop::collection::vec(-2.0..2.0f64, 4),
        shift in prop::collection::vec(-5.0..5.0f64, 2),
        pick in any::<u64>(),
    ) {
        let m = sizes.len();
        let n: usize = sizes.iter().sum();
        let bm = DMatrix::from_row_slice(2, 2, &b);
        prop_assume!(bm.determinant().abs() > 0.1);
        let base = experiment(sizes.clone(), x.clone(), 2);
        let mapped = base.x() * &bm + DMatrix::from_fn(n, 2, |_, j| shift[j]);
        let flat: Vec<f64> = (0..n).flat_map(|i| [mapped[(i, 0)], mapped[(i, 1)]]).collect();
        let moved = experiment(sizes, flat, 2);
        let m1 = m / 2;
        let treated: Vec<usize> = (0..m).filter(|i| (pick >> i) & 1 == 1).take(m1).collect();
        prop_assume!(treated.len() == m1);
        let z = Assignment::from_treated(m, &treated).unwrap();
        for level in [Level::Individual, Level::Cluster] {
            let cols: Vec<usize> = match level { Level::Individual => vec![0, 1], Level::Cluster => vec![1, 2] };
            let c1 = BalanceCriterion::mahalanobis(&base, level, &cols, m1);
            let c2 = BalanceCriterion::mahalanobis(&moved, level, &cols, m1);
            let (Ok(c1), Ok(c2)) = (c1, c2) else { continue };
            let s1 = balance_statistic(&base, &z, &c1).unwrap().statistic;
            let s2 = balance_statistic(&moved, &z, &c2).unwrap().statistic;
            prop_assert!((s1 - s2).abs() <= 1e-7 * (1.0 + s1), "{:?}: {} vs {}", level, s1, s2);
        }
    }

    #[test]
    fn tier_split_never_beats_orthogonal_optimum(
        raw in prop::collection::vec(0.01..1.0f64, 2..9),
        cut in 1usize..8,
        log_alpha in -4.0..-0.5f64,
        share in 0.05..0.95f64,
    ) {
        let k = raw.len();
        let cut = cut.min(k - 1);
        let total: f64 = raw.iter().sum();
        let r2: Vec<f64> = raw.iter().map(|r| r / total * 0.9).collect();
        let alpha = 10f64.powf(log_alpha);
        let rates = [alpha.powf(share), alpha.powf(1.0 - share)];
        let tiers = [r2[..cut].iter().sum::<f64>(), r2[cut..].iter().sum::<f64>()];
        let lhs = tier_expansion(&tiers, &[cut, k - cut], &rates).unwrap();
        let rhs = orthogonal_optimal_expansion(&r2, alpha).unwrap();
        prop_assert!(lhs >= rhs * (1.0 - 1e-12), "{} < {}", lhs, rhs);
    }

    #[test]
    fn adjusted_estimators_are_shift_equivariant(
        sizes in prop::collection::vec(2usize..5, 10..16),
        x in prop::collection::vec(-2.0..2.0f64, 64),
        y in prop::collection::vec(-5.0..5.0f64, 64),
        shift in -20.0..20.0f64,
    ) {
        let m = sizes.len();
        let n: usize = sizes.iter().sum();
        let exp = experiment(sizes, x, 1);
        let treated: Vec<usize> = (0..m).step_by(2).collect();
        let z = Assignment::from_treated(m, &treated).unwrap();
        let moved: Vec<f64> = y[..n].iter().map(|v| v + shift).collect();
        let a = estimate(&exp, &z, &y[..n], Estimator::HajAdj, &[0], Correction::None).unwrap();
        let b = estimate(&exp, &z, &moved, Estimator::HajAdj, &[0], Correction::None).unwrap();
        prop_assert!((a.tau_hat - b.tau_hat).abs() < 1e-9);
        prop_assert!((a.se - b.se).abs() < 1e-9);
    }
}

#[test]
fn p_k_decreases_towards_its_limit() {
    let values: Vec<f64> = (1..=200).map(|k| p_k(k).unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    // p_K -> 1/e
    assert!((values[199] - (-1f64).exp()).abs() < 0.02, "{}", values[199]);
}
