//! Standard normal vectors conditioned on an ellipsoid `eta' A eta <= a`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fpstats::linalg::sym_eigen;
use crate::fpstats::special::{chisq_cdf, chisq_quantile, normal_cdf_minus_half, normal_quantile_centered};

/// Gibbs burn-in sweeps.
pub const GIBBS_BURN_IN: usize = 1000;

/// Draw `u` from `N(0, 1)` restricted to `[-r, r]` by inverse CDF.
pub fn symmetric_truncated_normal<R: Rng + ?Sized>(r: f64, rng: &mut R) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r.is_infinite() {
        return rng.sample(StandardNormal);
    }
    let half = normal_cdf_minus_half(r);
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let x = normal_quantile_centered(u * half);
    x.clamp(-r, r)
}

/// How draws from the constrained Gaussian are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Exact: truncated chi-square radius times a uniform direction.
    Radial,
    /// Coordinate Gibbs in the eigenbasis of `A`.
    Gibbs,
}

/// Sampler for `eta ~ N(0, I_K)` given `eta' A eta <= a`.
#[derive(Debug, Clone)]
pub struct ConstrainedGaussian {
    k: usize,
    a: f64,
    lambda: DVector<f64>,
    basis: DMatrix<f64>,
    kind: SamplerKind,
}

impl ConstrainedGaussian {
    /// Radial when `A` is a multiple of the identity, Gibbs otherwise.
    pub fn new(a_mat: &DMatrix<f64>, a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation threshold must be positive, got {a}")));
        }
        let k = a_mat.nrows();
        if k == 0 || a_mat.ncols() != k {
            return Err(Error::Shape("constraint matrix must be square and nonempty".into()));
        }
        let (lambda, basis) = sym_eigen(a_mat);
        let top = lambda.max();
        if !(lambda.min() > 1e-14 * top.max(0.0)) {
            return Err(Error::NotPositiveDefinite("constraint matrix".into()));
        }
        // no constraint at all: eta is standard normal whatever A is
        let spherical = top - lambda.min() <= 1e-12 * top || a.is_infinite();
        let kind = if spherical { SamplerKind::Radial } else { SamplerKind::Gibbs };
        Ok(Self { k, a, lambda, basis, kind })
    }

    /// The identity constraint `||eta||^2 <= a`.
    pub fn ball(k: usize, a: f64) -> Result<Self> {
        Self::new(&DMatrix::identity(k, k), a)
    }

    /// Force the Gibbs sampler even when the radial method applies.
    pub fn force_gibbs(mut self) -> Self {
        self.kind = SamplerKind::Gibbs;
        self
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `count` draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        match self.kind {
            SamplerKind::Radial => self.sample_radial(count, rng),
            SamplerKind::Gibbs => self.sample_gibbs(count, rng),
        }
    }

    fn sample_radial<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let k = self.k;
        // squared radius bound in eta units: lambda ||eta||^2 <= a
        let r2max = self.a / self.lambda[0];
        let fmax = if r2max.is_finite() { chisq_cdf(r2max, k) } else { 1.0 };
        let mut out = DMatrix::zeros(count, k);
        let mut g = vec![0.0; k];
        for row in 0..count {
            let r2 = if fmax >= 1.0 {
                // effectively untruncated
                (0..k).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum::<f64>()
            } else {
                let u: f64 = 1.0 - rng.random::<f64>();
                chisq_quantile(u * fmax, k).unwrap_or(r2max).min(r2max)
            };
            let mut norm2 = 0.0;
            while norm2 == 0.0 {
                for v in g.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                norm2 = g.iter().map(|v| v * v).sum();
            }
            let scale = (r2 / norm2).sqrt();
            for j in 0..k {
                out[(row, j)] = g[j] * scale;
            }
        }
        out
    }

    fn sample_gibbs<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        if self.a.is_infinite() {
            return self.sample_radial(count, rng);
        }
        let k = self.k;
        let mut y = vec![0.0; k];
        let mut used = 0.0;
        let mut out = DMatrix::zeros(count, k);
        let sweep = |y: &mut Vec<f64>, used: &mut f64, rng: &mut R| {
            for j in 0..k {
                let rest = *used - self.lambda[j] * y[j] * y[j];
                let room = ((self.a - rest) / self.lambda[j]).max(0.0);
                y[j] = symmetric_truncated_normal(room.sqrt(), rng);
                *used = rest + self.lambda[j] * y[j] * y[j];
            }
            // refresh the running sum against drift
            *used = (0..k).map(|j| self.lambda[j] * y[j] * y[j]).sum();
        };
        for _ in 0..GIBBS_BURN_IN {
            sweep(&mut y, &mut used, rng);
        }
        for row in 0..count {
            sweep(&mut y, &mut used, rng);
            for i in 0..k {
                let mut s = 0.0;
                for j in 0..k {
                    s += self.basis[(i, j)] * y[j];
                }
                out[(row, i)] = s;
            }
        }
        out
    }
}

/// Draws of `eta | eta' A eta <= a`, one per row.
pub fn sample_constrained_gaussian<R: Rng + ?Sized>(
    a_mat: &DMatrix<f64>,
    a: f64,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(ConstrainedGaussian::new(a_mat, a)?.sample(count, rng))
}

/// Draws of `L_{K,a}`: the first coordinate of `N(0, I_K)` given `||D||^2 <= a`.
pub fn sample_l<R: Rng + ?Sized>(k: usize, a: f64, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    let draws = ConstrainedGaussian::ball(k, a)?.sample(count, rng);
    Ok(draws.column(0).iter().copied().collect())
}
