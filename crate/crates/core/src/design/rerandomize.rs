use rand::Rng;
use serde::{Deserialize, Serialize};

use super::criterion::{check_rate, empirical_quantile, BalanceCriterion, CriterionConfig, Evaluation};
use super::{covariate_diff, partial_shuffle, Assignment};
use crate::error::{Error, Result};
use crate::fpstats::ClusterExperiment;

/// Cap on rejection attempts when none is configured.
pub const DEFAULT_MAX_DRAWS: u64 = 1_000_000;

/// Design-stage configuration: criterion, arm size, draw cap and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub criterion: CriterionConfig,
    /// Number of treated clusters `M1`.
    pub treated: usize,
    #[serde(default = "default_max_draws")]
    pub max_draws: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_draws() -> u64 {
    DEFAULT_MAX_DRAWS
}

/// An accepted assignment with its bookkeeping.
#[derive(Debug, Clone)]
pub struct Rerandomized {
    pub assignment: Assignment,
    /// Draws used including the accepted one.
    pub draws: u64,
    pub evaluation: Evaluation,
}

/// Redraw complete randomizations until `crit` accepts one.
pub fn rerandomize<R: Rng + ?Sized>(crit: &BalanceCriterion, max_draws: u64, rng: &mut R) -> Result<Rerandomized> {
    if max_draws == 0 {
        return Err(Error::InvalidArgument("max_draws must be at least 1".into()));
    }
    let m = crit.m();
    let m1 = crit.m1();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    for draw in 1..=max_draws {
        partial_shuffle(&mut perm, m1, rng);
        let eval = crit.evaluate_treated(&perm[..m1]);
        if eval.accepted {
            return Ok(Rerandomized {
                assignment: Assignment::from_treated(m, &perm[..m1])?,
                draws: draw,
                evaluation: eval,
            });
        }
        best = best.min(crit.violation(&eval));
    }
    Err(Error::MaxDrawsExhausted { draws: max_draws, best, threshold: crit.violation_threshold() })
}

/// Statistic of a given assignment, computed from the covariate difference
/// of the population directly.
pub fn balance_statistic(exp: &ClusterExperiment, z: &Assignment, crit: &BalanceCriterion) -> Result<Evaluation> {
    if z.m1() != crit.m1() || z.m() != crit.m() {
        return Err(Error::Shape("assignment does not match the criterion's arm sizes".into()));
    }
    let raw = covariate_diff(exp, z, crit.level(), crit.columns())?;
    let d = crit.transform().transpose() * raw;
    Ok(crit.evaluate_diff(&d))
}

/// Empirical `alpha`-quantile of the statistic over `draws` complete randomizations.
pub fn empirical_threshold<R: Rng + ?Sized>(
    crit: &BalanceCriterion,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let alpha = check_rate(alpha)?;
    if draws == 0 {
        return Err(Error::InvalidArgument("empirical threshold needs draws >= 1".into()));
    }
    let m1 = crit.m1();
    let mut perm: Vec<usize> = (0..crit.m()).collect();
    let mut stats = Vec::with_capacity(draws);
    for _ in 0..draws {
        partial_shuffle(&mut perm, m1, rng);
        stats.push(crit.evaluate_treated(&perm[..m1]).statistic);
    }
    Ok(empirical_quantile(&mut stats, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Level;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn population(m: usize, k: usize, seed: u64) -> ClusterExperiment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(2..6)).collect();
        let n = sizes.iter().sum();
        let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        ClusterExperiment::new(sizes, x, c).unwrap()
    }

    #[test]
    fn infinite_threshold_accepts_first_draw() {
        let e = population(10, 2, 1);
        let crit = BalanceCriterion::mahalanobis(&e, Level::Cluster, &[0, 1], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = rerandomize(&crit, 10, &mut rng).unwrap();
        assert_eq!(r.draws, 1);
    }

    #[test]
    fn exhausted_draws_report_best() {
        let c = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 4.0, 8.0]);
        let e = ClusterExperiment::new(vec![1; 4], DMatrix::zeros(4, 0), c).unwrap();
        let crit = BalanceCriterion::mahalanobis(&e, Level::Cluster, &[0], 2).unwrap();
        // minimum over the 6 assignments
        let mut min = f64::INFINITY;
        for a in 0..4 {
            for b in a + 1..4 {
                min = min.min(crit.evaluate_treated(&[a, b]).statistic);
            }
        }
        let crit = crit.with_threshold(min * 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        match rerandomize(&crit, 200, &mut rng) {
            Err(Error::MaxDrawsExhausted { draws, best, .. }) => {
                assert_eq!(draws, 200);
                assert!((best - min).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn accepted_statistic_respects_threshold_and_slow_path_agrees() {
        let e = population(40, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for level in [Level::Cluster, Level::Individual] {
            let mut crit = BalanceCriterion::mahalanobis(&e, level, &[0, 1, 2], 20).unwrap();
            crit.calibrate(0.05, &mut rng).unwrap();
            let r = rerandomize(&crit, 100_000, &mut rng).unwrap();
            let slow = balance_statistic(&e, &r.assignment, &crit).unwrap();
            assert!(slow.accepted);
            assert!((slow.statistic - r.evaluation.statistic).abs() < 1e-9);
        }
    }

    #[test]
    fn empirical_acceptance_near_target() {
        let e = population(200, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut crit = BalanceCriterion::mahalanobis(&e, Level::Cluster, &[0, 1], 100).unwrap();
        crit.calibrate(0.1, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..200).collect();
        let n = 10_000;
        let acc = (0..n)
            .filter(|_| {
                partial_shuffle(&mut perm, 100, &mut rng);
                crit.evaluate_treated(&perm[..100]).accepted
            })
            .count();
        let rate = acc as f64 / n as f64;
        assert!((0.07..=0.13).contains(&rate), "rate {rate}");
    }

    #[test]
    fn empirical_threshold_rate() {
        let e = population(30, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let crit = BalanceCriterion::mahalanobis(&e, Level::Individual, &[0, 1], 15).unwrap();
        let a = empirical_threshold(&crit, 0.2, 20_000, &mut rng).unwrap();
        let crit = crit.with_threshold(a);
        let mut perm: Vec<usize> = (0..30).collect();
        let acc = (0..20_000)
            .filter(|_| {
                partial_shuffle(&mut perm, 15, &mut rng);
                crit.evaluate_treated(&perm[..15]).accepted
            })
            .count();
        assert!((acc as f64 / 20_000.0 - 0.2).abs() < 0.02);
    }
}
