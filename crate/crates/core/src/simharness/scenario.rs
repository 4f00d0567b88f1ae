//! Scenario configurations and synthetic finite populations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::methods::Method;
use crate::error::{Error, Result};
use crate::fpstats::{var_f, ClusterExperiment};

/// Inclusive integer range of cluster sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub lo: usize,
    pub hi: usize,
}

/// Cluster effect `g(n_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterEffect {
    /// `(n - 7) / 2`.
    Linear,
    /// `6`.
    Constant,
    /// `intercept + slope * n`.
    Custom { intercept: f64, slope: f64 },
}

impl ClusterEffect {
    pub fn eval(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            ClusterEffect::Linear => (n - 7.0) / 2.0,
            ClusterEffect::Constant => 6.0,
            ClusterEffect::Custom { intercept, slope } => intercept + slope * n,
        }
    }
}

/// Outcome link `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFn {
    Linear,
    Cubic,
}

impl OutcomeFn {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            OutcomeFn::Linear => t,
            OutcomeFn::Cubic => t * t * t,
        }
    }
}

/// Outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    /// `Y_ij(z) = g(n_i) + x_ij' beta_iz + e_ij(z)` with exchangeable covariates.
    Additive {
        rho: f64,
        /// Coefficient scale; solved for `share` when absent.
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "half")]
        share: f64,
        effect: ClusterEffect,
        #[serde(default = "sixteen")]
        noise_var: f64,
    },
    /// `Y_ij(z) = f(2 + e_iz + x_ij' beta_iz) + e_ij(z)` with `t_3` coefficients
    /// and noise sized so `f(.)` is half the variation of each arm.
    Factorial { outcome: OutcomeFn },
}

fn half() -> f64 {
    0.5
}

fn sixteen() -> f64 {
    16.0
}

pub(crate) fn default_level() -> f64 {
    0.05
}

pub(crate) fn default_mc() -> usize {
    crate::inference::DEFAULT_MC_SIZE
}

pub(crate) fn default_max_draws() -> u64 {
    crate::design::DEFAULT_MAX_DRAWS
}

/// A full simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub m: usize,
    pub m1: usize,
    pub sizes: SizeRange,
    pub k: usize,
    pub model: Model,
    pub replications: usize,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    /// Significance level `varsigma` of the intervals.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_mc")]
    pub mc_size: usize,
    #[serde(default = "default_max_draws")]
    pub max_draws: u64,
}

impl ScenarioConfig {
    /// The four additive scenarios: `(K, rho, gamma, g)` of
    /// `(7, 0.8, 1, linear)`, `(7, -0.15, 5, linear)`, `(12, 0.4, 0.5, 6)`, `(12, -0.09, 12, 6)`,
    /// with `M = 100`, `M1 = 50`, sizes `4..=10`, noise variance 16 and `alpha = 0.001`.
    pub fn preset(id: u8) -> Result<Self> {
        let (k, rho, gamma, effect) = match id {
            1 => (7, 0.8, 1.0, ClusterEffect::Linear),
            2 => (7, -0.15, 5.0, ClusterEffect::Linear),
            3 => (12, 0.4, 0.5, ClusterEffect::Constant),
            4 => (12, -0.09, 12.0, ClusterEffect::Constant),
            _ => return Err(Error::InvalidArgument(format!("unknown scenario {id}; presets are 1 to 4"))),
        };
        Ok(Self {
            name: format!("scenario{id}"),
            m: 100,
            m1: 50,
            sizes: SizeRange { lo: 4, hi: 10 },
            k,
            model: Model::Additive { rho, gamma: Some(gamma), share: 0.5, effect, noise_var: 16.0 },
            replications: 1000,
            alpha: 0.001,
            seed: id as u64,
            methods: Method::all(),
            level: 0.05,
            mc_size: default_mc(),
            max_draws: default_max_draws(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 == 0 || self.m1 >= self.m {
            return Err(Error::InvalidArgument(format!("need 0 < M1 < M, got M1 = {} and M = {}", self.m1, self.m)));
        }
        if self.sizes.lo == 0 || self.sizes.lo > self.sizes.hi {
            return Err(Error::InvalidArgument("cluster sizes need 1 <= lo <= hi".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("need at least one covariate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("acceptance rate must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("significance level must lie in (0, 1), got {}", self.level)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods listed".into()));
        }
        if let Model::Additive { share, noise_var, .. } = &self.model {
            if !(*share > 0.0 && *share < 1.0) {
                return Err(Error::InvalidArgument(format!("variance share must lie in (0, 1), got {share}")));
            }
            if !(*noise_var >= 0.0) {
                return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Exchangeable correlation `(1 - rho) I + rho 1 1'`, checked positive definite.
pub fn exchangeable(k: usize, rho: f64) -> Result<DMatrix<f64>> {
    let s = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
    if s.clone().cholesky().is_none() || (k > 1 && rho <= -1.0 / (k as f64 - 1.0)) {
        return Err(Error::NotPositiveDefinite(format!(
            "exchangeable correlation with rho = {rho} in {k} dimensions (need rho > {:.4})",
            -1.0 / (k as f64 - 1.0).max(1.0)
        )));
    }
    Ok(s)
}

/// A generated population plus what went into it.
#[derive(Debug, Clone)]
pub struct Population {
    pub experiment: ClusterExperiment,
    /// Coefficient scale actually used (additive model).
    pub gamma: Option<f64>,
    /// Share of the pooled outcome variance carried by `x' beta`.
    pub covariate_share: f64,
    /// Noise variances per arm (factorial model).
    pub noise_var: [f64; 2],
}

/// Draw a fixed finite population. Cluster covariates are `(n_i, x~_i)`.
pub fn generate_population<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Population> {
    cfg.validate()?;
    let m = cfg.m;
    let k = cfg.k;
    let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(cfg.sizes.lo..=cfg.sizes.hi)).collect();
    let n: usize = sizes.iter().sum();
    let pop = match &cfg.model {
        Model::Additive { rho, gamma, share, effect, noise_var } => {
            let chol = exchangeable(k, *rho)?.cholesky().expect("checked positive definite").l();
            let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal)) * chol.transpose();
            // beta_1 = gamma * mult, beta_0 = gamma * (2 - mult)
            let mult: Vec<f64> = (0..k).map(|_| [0.5, 1.0, 1.5][rng.random_range(0..3)]).collect();
            let jitter: Vec<[Vec<f64>; 2]> = (0..m)
                .map(|_| {
                    let mut d = || (0..k).map(|_| rng.random_range(-0.1..0.1)).collect::<Vec<f64>>();
                    [d(), d()]
                })
                .collect();
            let sd = noise_var.sqrt();
            let noise: [Vec<f64>; 2] = [
                (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
                (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
            ];
            // per-arm unit-level pieces: a = x' b_z (scales with gamma), b = x' jitter
            let mut scaled = [vec![0.0; n], vec![0.0; n]];
            let mut fixed = [vec![0.0; n], vec![0.0; n]];
            let mut base = [vec![0.0; n], vec![0.0; n]];
            let mut row = 0;
            for (i, &s) in sizes.iter().enumerate() {
                for _ in 0..s {
                    for z in 0..2 {
                        let mut a = 0.0;
                        let mut b = 0.0;
                        for j in 0..k {
                            let bz = if z == 1 { mult[j] } else { 2.0 - mult[j] };
                            a += x[(row, j)] * bz;
                            b += x[(row, j)] * jitter[i][z][j];
                        }
                        scaled[z][row] = a;
                        fixed[z][row] = b;
                        base[z][row] = effect.eval(s) + noise[z][row];
                    }
                    row += 1;
                }
            }
            let share_at = |g: f64| -> Result<f64> {
                let mut cov_part = Vec::with_capacity(2 * n);
                let mut total = Vec::with_capacity(2 * n);
                for z in 0..2 {
                    for r in 0..n {
                        let c = g * scaled[z][r] + fixed[z][r];
                        cov_part.push(c);
                        total.push(c + base[z][r]);
                    }
                }
                Ok(var_f(&cov_part)? / var_f(&total)?)
            };
            let g = match gamma {
                Some(g) => *g,
                None => solve_gamma(&share_at, *share)?,
            };
            let covariate_share = share_at(g)?;
            let mut y = [vec![0.0; n], vec![0.0; n]];
            for z in 0..2 {
                for r in 0..n {
                    y[z][r] = g * scaled[z][r] + fixed[z][r] + base[z][r];
                }
            }
            let [y0, y1] = y;
            let exp = build(sizes, x)?.with_potential_outcomes(y0, y1)?;
            Population { experiment: exp, gamma: Some(g), covariate_share, noise_var: [*noise_var; 2] }
        }
        Model::Factorial { outcome } => {
            let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let t3 = StudentT::new(3.0).expect("valid degrees of freedom");
            let beta: [DVector<f64>; 2] =
                [DVector::from_fn(k, |_, _| t3.sample(rng)), DVector::from_fn(k, |_, _| t3.sample(rng))];
            let sigma2 = [
                systematic_variance(*outcome, &beta[0], &sizes, rng),
                systematic_variance(*outcome, &beta[1], &sizes, rng),
            ];
            let mut sys = [vec![0.0; n], vec![0.0; n]];
            let mut row0 = 0;
            for &s in &sizes {
                for z in 0..2 {
                    let e: f64 = rng.sample(StandardNormal);
                    let b = &beta[z] + DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                    for r in row0..row0 + s {
                        let lin: f64 = (0..k).map(|j| x[(r, j)] * b[j]).sum();
                        sys[z][r] = outcome.eval(2.0 + e + lin);
                    }
                }
                row0 += s;
            }
            let mut y = [vec![0.0; n], vec![0.0; n]];
            for z in 0..2 {
                let sd = sigma2[z].sqrt();
                for r in 0..n {
                    y[z][r] = sys[z][r] + sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let pooled: Vec<f64> = sys[0].iter().chain(&sys[1]).copied().collect();
            let all: Vec<f64> = y[0].iter().chain(&y[1]).copied().collect();
            let covariate_share = var_f(&pooled)? / var_f(&all)?;
            let [y0, y1] = y;
            let exp = build(sizes, x)?.with_potential_outcomes(y0, y1)?;
            Population { experiment: exp, gamma: None, covariate_share, noise_var: sigma2 }
        }
    };
    Ok(pop)
}

/// Variance of `f(2 + e + x' (beta + s))` over `10^5` probe units.
fn systematic_variance<R: Rng + ?Sized>(f: OutcomeFn, beta: &DVector<f64>, sizes: &[usize], rng: &mut R) -> f64 {
    const PROBES: usize = 100_000;
    let k = beta.len();
    let mut vals = Vec::with_capacity(PROBES);
    while vals.len() < PROBES {
        let s = sizes[rng.random_range(0..sizes.len())];
        let e: f64 = rng.sample(StandardNormal);
        let b = beta + DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        for _ in 0..s.min(PROBES - vals.len()) {
            let lin: f64 = (0..k).map(|j| rng.sample::<f64, _>(StandardNormal) * b[j]).sum();
            vals.push(f.eval(2.0 + e + lin));
        }
    }
    var_f(&vals).unwrap_or(0.0)
}

fn solve_gamma(share_at: &dyn Fn(f64) -> Result<f64>, target: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while share_at(hi)? < target {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Infeasible(format!("no coefficient scale reaches a covariate share of {target}")));
        }
    }
    if share_at(lo)? > target {
        return Err(Error::Infeasible(format!("covariate share exceeds {target} even with zero main coefficients")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn build(sizes: Vec<usize>, x: DMatrix<f64>) -> Result<ClusterExperiment> {
    let k = x.ncols();
    let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
    let m = sizes.len();
    let mut exp = ClusterExperiment::new(sizes, x, DMatrix::zeros(m, 0))?;
    exp = exp.with_x_names(names.clone())?;
    let c = exp.size_and_totals()?;
    let mut c_names = vec!["n".to_string()];
    c_names.extend(names);
    exp.set_cluster_covariates(c, c_names)?;
    Ok(exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_parse_back() {
        for id in 1..=4 {
            let cfg = ScenarioConfig::preset(id).unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(cfg, back);
        }
        assert!(ScenarioConfig::preset(5).is_err());
    }

    #[test]
    fn gamma_calibration_hits_share() {
        let mut cfg = ScenarioConfig::preset(1).unwrap();
        if let Model::Additive { gamma, .. } = &mut cfg.model {
            *gamma = None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop = generate_population(&cfg, &mut rng).unwrap();
        assert!((pop.covariate_share - 0.5).abs() < 0.05, "{}", pop.covariate_share);
    }

    #[test]
    fn sizes_in_range_and_covariates_centered() {
        let cfg = ScenarioConfig::preset(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pop = generate_population(&cfg, &mut rng).unwrap();
        let e = &pop.experiment;
        assert!(e.sizes().iter().all(|&s| (4..=10).contains(&s)));
        assert_eq!(e.c().ncols(), 8);
        assert!(e.c().column(0).sum().abs() < 1e-9);
    }

    #[test]
    fn infeasible_correlation_rejected() {
        assert!(exchangeable(12, -0.09).is_ok());
        assert!(exchangeable(12, -0.1).is_err());
    }

    #[test]
    fn factorial_noise_matches_systematic_part() {
        let cfg = ScenarioConfig {
            name: "f".into(),
            m: 40,
            m1: 20,
            sizes: SizeRange { lo: 4, hi: 10 },
            k: 1,
            model: Model::Factorial { outcome: OutcomeFn::Linear },
            replications: 10,
            alpha: 0.1,
            seed: 0,
            methods: Method::all(),
            level: 0.05,
            mc_size: 10_000,
            max_draws: 1000,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pop = generate_population(&cfg, &mut rng).unwrap();
        assert!(pop.noise_var.iter().all(|&v| v > 0.0));
        assert!((0.2..0.8).contains(&pop.covariate_share), "{}", pop.covariate_share);
    }
}
