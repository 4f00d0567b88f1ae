//! The limiting law `V^{1/2} { (1 - R2)^{1/2} eps + R mu' eta | eta' A eta <= a }`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::sampler::{ConstrainedGaussian, SamplerKind};
use crate::design::{BalanceCriterion, Kind};
use crate::error::{Error, Result};
use crate::fpstats::linalg::sym_sqrt;

/// Smallest accepted Monte Carlo size for a law quantile.
pub const MIN_MC_SIZE: usize = 10_000;
/// Default Monte Carlo size for a law quantile.
pub const DEFAULT_MC_SIZE: usize = 100_000;

/// Constraint `eta' A eta <= a` on the standardized imbalance.
#[derive(Debug, Clone, PartialEq)]
pub struct LawShape {
    pub matrix: DMatrix<f64>,
    pub a: f64,
    /// For a spherical constraint the direction `mu` is irrelevant and `xi_1` is used.
    pub spherical: bool,
}

impl LawShape {
    /// `||eta||^2 <= a` in `K` dimensions.
    pub fn ball(k: usize, a: f64) -> Self {
        Self { matrix: DMatrix::identity(k, k), a, spherical: true }
    }

    /// `eta' M eta <= a` for a given standardized matrix.
    pub fn ellipsoid(matrix: DMatrix<f64>, a: f64) -> Self {
        Self { matrix, a, spherical: false }
    }

    /// Standardized constraint of a criterion: `I_K` for Mahalanobis,
    /// `V^{1/2} A V^{1/2}` otherwise.
    pub fn from_criterion(crit: &BalanceCriterion) -> Result<Self> {
        if crit.has_tiers() {
            return Err(Error::InvalidArgument("improved intervals are not available for tiered criteria".into()));
        }
        if crit.kind() == Kind::Mahalanobis {
            return Ok(Self::ball(crit.dim(), crit.threshold()));
        }
        let root = sym_sqrt(crit.v_ss(), "imbalance covariance")?;
        let m = &root * crit.matrix() * &root;
        Ok(Self::ellipsoid((&m + m.transpose()) * 0.5, crit.threshold()))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Draws of `(eps, eta)` shared across many quantile evaluations.
#[derive(Debug, Clone)]
pub struct ConstrainedPool {
    eta: DMatrix<f64>,
    eps: Vec<f64>,
    spherical: bool,
    kind: SamplerKind,
}

impl ConstrainedPool {
    pub fn new<R: Rng + ?Sized>(shape: &LawShape, size: usize, rng: &mut R) -> Result<Self> {
        if size < MIN_MC_SIZE {
            return Err(Error::InvalidArgument(format!("Monte Carlo size must be at least {MIN_MC_SIZE}, got {size}")));
        }
        let sampler = ConstrainedGaussian::new(&shape.matrix, shape.a)?;
        let eta = if shape.spherical {
            // only the first coordinate is ever used
            let draws = sampler.sample(size, rng);
            draws.columns(0, 1).into_owned()
        } else {
            sampler.sample(size, rng)
        };
        let eps = (0..size).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self { eta, eps, spherical: shape.spherical, kind: sampler.kind() })
    }

    pub fn size(&self) -> usize {
        self.eps.len()
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        self.kind
    }

    /// Standardized law values `(1 - R2)^{1/2} eps + R mu' eta` (unit `V`).
    pub fn values(&self, r2: f64, mu: &DVector<f64>) -> Result<Vec<f64>> {
        let r2 = check_r2(r2)?;
        let proj: DVector<f64> = if self.spherical {
            self.eta.column(0).into_owned()
        } else {
            if mu.len() != self.eta.ncols() {
                return Err(Error::Shape(format!("mu has {} entries, law has {}", mu.len(), self.eta.ncols())));
            }
            check_unit(mu)?;
            &self.eta * mu
        };
        let (s, r) = ((1.0 - r2).sqrt(), r2.sqrt());
        Ok(self.eps.iter().zip(proj.iter()).map(|(e, p)| s * e + r * p).collect())
    }

    /// Standardized `zeta`-quantile.
    pub fn quantile(&self, r2: f64, mu: &DVector<f64>, zeta: f64) -> Result<f64> {
        let mut v = self.values(r2, mu)?;
        Ok(sample_quantile(&mut v, zeta))
    }

    /// Standardized `1 - level/2` quantile of `|law|`; the law is symmetric so
    /// `+-` this value bounds a central `1 - level` interval.
    pub fn half_width(&self, r2: f64, mu: &DVector<f64>, level: f64) -> Result<f64> {
        check_level(level)?;
        let mut v: Vec<f64> = self.values(r2, mu)?.into_iter().map(f64::abs).collect();
        Ok(sample_quantile(&mut v, 1.0 - level))
    }
}

/// The full law for one set of parameters.
#[derive(Debug, Clone)]
pub struct AsymptoticLaw {
    pub v: f64,
    pub r2: f64,
    pub mu: DVector<f64>,
    pub shape: LawShape,
}

impl AsymptoticLaw {
    pub fn new(v: f64, r2: f64, mu: DVector<f64>, shape: LawShape) -> Result<Self> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("variance must be finite and nonnegative, got {v}")));
        }
        check_r2(r2)?;
        if mu.len() != shape.dim() {
            return Err(Error::Shape(format!(
                "mu has {} entries, constraint is {}-dimensional",
                mu.len(),
                shape.dim()
            )));
        }
        check_unit(&mu)?;
        Ok(Self { v, r2, mu, shape })
    }

    /// `count` draws of the law.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<f64>> {
        let sampler = ConstrainedGaussian::new(&self.shape.matrix, self.shape.a)?;
        let eta = sampler.sample(count, rng);
        let proj: DVector<f64> = if self.shape.spherical { eta.column(0).into_owned() } else { &eta * &self.mu };
        let (s, r, sd) = ((1.0 - self.r2).sqrt(), self.r2.sqrt(), self.v.sqrt());
        Ok(proj
            .iter()
            .map(|p| {
                let e: f64 = rng.sample(StandardNormal);
                sd * (s * e + r * p)
            })
            .collect())
    }
}

/// Monte Carlo `zeta`-quantile of the law.
pub fn law_quantile<R: Rng + ?Sized>(law: &AsymptoticLaw, zeta: f64, mc_size: usize, rng: &mut R) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {zeta}")));
    }
    if mc_size < MIN_MC_SIZE {
        return Err(Error::InvalidArgument(format!("Monte Carlo size must be at least {MIN_MC_SIZE}, got {mc_size}")));
    }
    let mut v = law.sample(mc_size, rng)?;
    Ok(sample_quantile(&mut v, zeta))
}

/// Standard error of the `zeta`-quantile estimate from `batches` batch means.
///
/// Contiguous batches absorb the serial correlation of Gibbs draws.
pub fn batch_quantile_se(values: &[f64], zeta: f64, batches: usize) -> Result<f64> {
    if batches < 2 || values.len() < 2 * batches {
        return Err(Error::InvalidArgument("batch means need at least two batches of two draws".into()));
    }
    let len = values.len() / batches;
    let qs: Vec<f64> = values
        .chunks_exact(len)
        .take(batches)
        .map(|c| {
            let mut c = c.to_vec();
            sample_quantile(&mut c, zeta)
        })
        .collect();
    let mean = qs.iter().sum::<f64>() / batches as f64;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Order statistic `ceil(zeta n)`, reordering `v`.
pub(crate) fn sample_quantile(v: &mut [f64], zeta: f64) -> f64 {
    let n = v.len();
    let rank = ((zeta * n as f64).ceil() as usize).clamp(1, n);
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    *kth
}

fn check_r2(r2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r2) {
        return Err(Error::InvalidArgument(format!("R2 must lie in [0, 1], got {r2}")));
    }
    Ok(r2)
}

fn check_unit(mu: &DVector<f64>) -> Result<()> {
    if (mu.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("mu must have unit norm, got {}", mu.norm())));
    }
    Ok(())
}

pub(crate) fn check_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("significance level must lie in (0, 1), got {level}")));
    }
    Ok(level)
}
