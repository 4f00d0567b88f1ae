//! Complete randomization of clusters and rerandomization against balance
//! criteria.

mod criterion;
mod optimal;
mod rerandomize;

pub use criterion::{
    calibrate_threshold, BalanceCriterion, CriterionConfig, Evaluation, Kind, Level, Threshold, TierConfig,
    DEFAULT_CALIBRATION_DRAWS, DEFAULT_EMPIRICAL_DRAWS,
};
pub use optimal::{optimal_tier_rates, optimal_weight_matrix};
pub use rerandomize::{
    balance_statistic, empirical_threshold, rerandomize, DesignSpec, Rerandomized, DEFAULT_MAX_DRAWS,
};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpstats::ClusterExperiment;

/// A treatment assignment over clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    z: Vec<u8>,
    m1: usize,
}

impl Assignment {
    /// Wrap a 0/1 vector, checking entries and that both arms are nonempty.
    pub fn new(z: Vec<u8>) -> Result<Self> {
        if let Some(bad) = z.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("assignment entries must be 0 or 1, got {bad}")));
        }
        let m1 = z.iter().filter(|&&v| v == 1).count();
        if m1 == 0 || m1 == z.len() {
            return Err(Error::InvalidArgument("both arms need at least one cluster".into()));
        }
        Ok(Self { z, m1 })
    }

    /// Assignment treating exactly the listed clusters.
    pub fn from_treated(m: usize, treated: &[usize]) -> Result<Self> {
        let mut z = vec![0u8; m];
        for &i in treated {
            if i >= m {
                return Err(Error::Shape(format!("cluster {i} out of range")));
            }
            z[i] = 1;
        }
        Self::new(z)
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m0(&self) -> usize {
        self.z.len() - self.m1
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i] == 1
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.z
    }
}

pub(crate) fn check_arm_sizes(m: usize, m1: usize) -> Result<()> {
    if m1 == 0 || m1 >= m {
        return Err(Error::InvalidArgument(format!("need 0 < M1 < M, got M1={m1}, M={m}")));
    }
    Ok(())
}

/// Choose `m1` of `m` positions uniformly by a partial Fisher-Yates shuffle of `perm`.
pub(crate) fn partial_shuffle<R: Rng + ?Sized>(perm: &mut [usize], m1: usize, rng: &mut R) {
    let m = perm.len();
    for i in 0..m1 {
        let j = rng.random_range(i..m);
        perm.swap(i, j);
    }
}

/// Complete randomization: `m1` of `m` clusters treated, uniformly at random.
pub fn draw_complete<R: Rng + ?Sized>(m: usize, m1: usize, rng: &mut R) -> Result<Assignment> {
    check_arm_sizes(m, m1)?;
    let mut perm: Vec<usize> = (0..m).collect();
    partial_shuffle(&mut perm, m1, rng);
    Assignment::from_treated(m, &perm[..m1])
}

/// Difference in covariate means between arms.
///
/// Cluster level: `M1^{-1} sum Z_i c_i - M0^{-1} sum (1 - Z_i) c_i` over the
/// selected cluster covariates. Individual level: difference of unit-level
/// means of the selected individual covariates, dividing by the realized
/// `N1` and `N0`.
pub fn covariate_diff(exp: &ClusterExperiment, z: &Assignment, level: Level, cols: &[usize]) -> Result<DVector<f64>> {
    if z.m() != exp.m() {
        return Err(Error::Shape(format!("assignment has {} clusters, population {}", z.m(), exp.m())));
    }
    let k = cols.len();
    let mut t = DVector::zeros(k);
    let mut cn = DVector::zeros(k);
    match level {
        Level::Cluster => {
            let c = exp.c_cols(cols)?;
            for i in 0..exp.m() {
                if z.is_treated(i) {
                    t += c.row(i).transpose();
                } else {
                    cn += c.row(i).transpose();
                }
            }
            Ok(t / z.m1() as f64 - cn / z.m0() as f64)
        }
        Level::Individual => {
            let x = crate::fpstats::select_columns(exp.x(), cols, "x")?;
            let (mut n1, mut n0) = (0usize, 0usize);
            for (i, w) in exp.offsets().windows(2).enumerate() {
                for r in w[0]..w[1] {
                    if z.is_treated(i) {
                        t += x.row(r).transpose();
                        n1 += 1;
                    } else {
                        cn += x.row(r).transpose();
                        n0 += 1;
                    }
                }
            }
            if n1 == 0 || n0 == 0 {
                return Err(Error::InvalidArgument("an arm has no units".into()));
            }
            Ok(t / n1 as f64 - cn / n0 as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn complete_randomization_is_uniform_over_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            let a = draw_complete(4, 2, &mut rng).unwrap();
            *counts.entry(a.into_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% point of chi-square with 5 dof is 20.5
        assert!(chi2 < 20.5, "chi2 = {chi2}");
    }

    #[test]
    fn invalid_arm_sizes_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_complete(3, 3, &mut rng).is_err());
        assert!(draw_complete(3, 0, &mut rng).is_err());
    }

    #[test]
    fn cluster_difference_by_hand() {
        let e =
            ClusterExperiment::new(vec![1, 1], DMatrix::zeros(2, 0), DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]))
                .unwrap();
        let z = Assignment::new(vec![1, 0]).unwrap();
        let d = covariate_diff(&e, &z, Level::Cluster, &[0]).unwrap();
        assert_eq!(d[0], -2.0);
    }

    #[test]
    fn individual_difference_by_hand() {
        let e = ClusterExperiment::new(
            vec![1, 1, 1, 1],
            DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 2.0, -2.0]),
            DMatrix::zeros(4, 0),
        )
        .unwrap();
        let z = Assignment::new(vec![1, 1, 0, 0]).unwrap();
        let d = covariate_diff(&e, &z, Level::Individual, &[0]).unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn mirrored_covariates_balance() {
        let c = DMatrix::from_column_slice(4, 1, &[-1.0, 1.0, 1.0, -1.0]);
        let e = ClusterExperiment::new(vec![2, 2, 2, 2], DMatrix::zeros(8, 0), c).unwrap();
        let z = Assignment::new(vec![1, 1, 0, 0]).unwrap();
        assert_eq!(covariate_diff(&e, &z, Level::Cluster, &[0]).unwrap()[0], 0.0);
    }
}
