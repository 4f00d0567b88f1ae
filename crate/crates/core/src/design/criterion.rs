use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpstats::linalg::{spd_inverse, sym_eigen, sym_sqrt};
use crate::fpstats::{chisq_quantile, finite_pop_cov, gram_schmidt_upper, ClusterExperiment};

use super::check_arm_sizes;

/// Monte Carlo draws used to calibrate a general quadratic threshold.
pub const DEFAULT_CALIBRATION_DRAWS: usize = 2_000_000;

/// Assignments drawn for an empirical threshold.
pub const DEFAULT_EMPIRICAL_DRAWS: usize = 100_000;

/// Which covariates the imbalance is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Cluster-level covariates, Horvitz-Thompson difference.
    Cluster,
    /// Individual-level covariates, difference of unit means.
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Mahalanobis,
    WeightedEuclidean,
    GeneralQuadratic,
}

/// A threshold in a config file: a number or the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Value(f64),
    Named(String),
}

impl Threshold {
    fn resolve(&self) -> Result<f64> {
        match self {
            Threshold::Value(v) if *v >= 0.0 => Ok(*v),
            Threshold::Value(v) => Err(Error::InvalidArgument(format!("threshold must be >= 0, got {v}"))),
            Threshold::Named(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                other => Err(Error::InvalidArgument(format!("unrecognized threshold '{other}'"))),
            },
        }
    }
}

/// One tier of covariates with its own Mahalanobis threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rate: Option<f64>,
}

/// Serializable description of a balance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConfig {
    pub level: Level,
    #[serde(default)]
    pub kind: Kind,
    /// Covariate names; all covariates of the level when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rate: Option<f64>,
    /// Take the threshold from the empirical distribution of the statistic.
    #[serde(default)]
    pub empirical: bool,
    /// Gram-Schmidt orthogonalize the covariates in the listed order first.
    #[serde(default)]
    pub orthogonalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiers: Option<Vec<TierConfig>>,
}

impl CriterionConfig {
    /// Mahalanobis balance on every covariate of `level` at acceptance rate `rate`.
    pub fn mahalanobis(level: Level, rate: f64) -> Self {
        Self {
            level,
            kind: Kind::Mahalanobis,
            columns: None,
            weights: None,
            matrix: None,
            threshold: None,
            target_rate: Some(rate),
            empirical: false,
            orthogonalize: false,
            tiers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Tier {
    pub idx: Vec<usize>,
    pub q: DMatrix<f64>,
    pub threshold: f64,
}

/// Outcome of checking one assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `M d^T A d`; for tiers, the sum of the tier statistics.
    pub statistic: f64,
    /// Per-tier Mahalanobis statistics (empty without tiers).
    pub tier_statistics: Vec<f64>,
    pub accepted: bool,
}

/// A compiled balance criterion bound to one population and arm size.
///
/// The acceptance rule is `M d^T A d <= a`, where `d` is the covariate
/// difference (after the optional orthogonalizing map) and `A` is the inverse
/// of `V_ss = cov_f(S) / (e1 e0)` for the Mahalanobis kind. With tiers every
/// tier must pass its own Mahalanobis check.
#[derive(Debug, Clone)]
pub struct BalanceCriterion {
    pub(crate) level: Level,
    pub(crate) kind: Kind,
    pub(crate) cols: Vec<usize>,
    pub(crate) names: Vec<String>,
    pub(crate) m1: usize,
    pub(crate) transform: DMatrix<f64>,
    /// Per-cluster rows whose treated-set sums give the difference.
    pub(crate) rows: DMatrix<f64>,
    pub(crate) row_total: DVector<f64>,
    pub(crate) sizes: Vec<usize>,
    /// Design covariates `S~` in criterion coordinates, one row per cluster.
    pub(crate) s: DMatrix<f64>,
    pub(crate) v_ss: DMatrix<f64>,
    pub(crate) q: DMatrix<f64>,
    pub(crate) threshold: f64,
    pub(crate) tiers: Vec<Tier>,
}

enum Form {
    Mahalanobis,
    Weights(Vec<f64>),
    Matrix(DMatrix<f64>),
}

impl BalanceCriterion {
    /// Mahalanobis criterion on the listed covariates, threshold `+inf` until set.
    pub fn mahalanobis(exp: &ClusterExperiment, level: Level, cols: &[usize], m1: usize) -> Result<Self> {
        Self::build(exp, level, cols, m1, false, Form::Mahalanobis, None)
    }

    /// Weighted Euclidean criterion `M sum_k w_k d_k^2`.
    pub fn weighted(
        exp: &ClusterExperiment,
        level: Level,
        cols: &[usize],
        m1: usize,
        weights: &[f64],
        orthogonalize: bool,
    ) -> Result<Self> {
        Self::build(exp, level, cols, m1, orthogonalize, Form::Weights(weights.to_vec()), None)
    }

    /// General quadratic criterion `M d^T A d`.
    pub fn quadratic(
        exp: &ClusterExperiment,
        level: Level,
        cols: &[usize],
        m1: usize,
        a: DMatrix<f64>,
        orthogonalize: bool,
    ) -> Result<Self> {
        Self::build(exp, level, cols, m1, orthogonalize, Form::Matrix(a), None)
    }

    /// Tiers of covariates; `tiers` lists column indices in decreasing importance.
    pub fn tiered(
        exp: &ClusterExperiment,
        level: Level,
        tiers: &[Vec<usize>],
        m1: usize,
        orthogonalize: bool,
    ) -> Result<Self> {
        let cols: Vec<usize> = tiers.iter().flatten().copied().collect();
        let mut pos = 0;
        let layout: Vec<Vec<usize>> = tiers
            .iter()
            .map(|t| {
                let idx = (pos..pos + t.len()).collect();
                pos += t.len();
                idx
            })
            .collect();
        Self::build(exp, level, &cols, m1, orthogonalize, Form::Mahalanobis, Some(layout))
    }

    fn build(
        exp: &ClusterExperiment,
        level: Level,
        cols: &[usize],
        m1: usize,
        orthogonalize: bool,
        form: Form,
        tiers: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let m = exp.m();
        check_arm_sizes(m, m1)?;
        let k = cols.len();
        if k == 0 {
            return Err(Error::InvalidArgument("a balance criterion needs at least one covariate".into()));
        }
        let mut sorted = cols.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("covariate column {} listed twice", w[0])));
        }
        let (all_names, base_rows, s_tilde) = match level {
            Level::Cluster => {
                let c = exp.c_cols(cols)?;
                (exp.c_names(), c.clone(), c)
            }
            Level::Individual => {
                let x = crate::fpstats::select_columns(exp.x(), cols, "x")?;
                let sums = exp.scaled_cluster_totals_matrix(&x)? * (exp.n_units() as f64 / m as f64);
                let xt = exp.x_tilde(cols)?;
                (exp.x_names(), sums, xt)
            }
        };
        let names: Vec<String> = cols.iter().map(|&c| all_names[c].clone()).collect();
        let transform = if orthogonalize {
            gram_schmidt_upper(&s_tilde, &names)?.matrix().clone()
        } else {
            DMatrix::identity(k, k)
        };
        let rows = &base_rows * &transform;
        let s = &s_tilde * &transform;
        let e1 = m1 as f64 / m as f64;
        let e0 = 1.0 - e1;
        let v_ss = finite_pop_cov(&s, &s)? / (e1 * e0);
        let kind = match &form {
            Form::Mahalanobis => Kind::Mahalanobis,
            Form::Weights(_) => Kind::WeightedEuclidean,
            Form::Matrix(_) => Kind::GeneralQuadratic,
        };
        let what = format!("{:?} covariates [{}]", level, names.join(", ")).to_lowercase();
        let q = match form {
            Form::Mahalanobis => spd_inverse(&v_ss, &what)?,
            Form::Weights(w) => {
                if w.len() != k {
                    return Err(Error::Shape(format!("{} weights for {k} covariates", w.len())));
                }
                if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidArgument("weights must be positive and finite".into()));
                }
                DMatrix::from_diagonal(&DVector::from_vec(w))
            }
            Form::Matrix(a) => {
                if a.shape() != (k, k) {
                    return Err(Error::Shape(format!("matrix is {}x{}, expected {k}x{k}", a.nrows(), a.ncols())));
                }
                if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
                    return Err(Error::InvalidArgument("criterion matrix must be symmetric".into()));
                }
                if a.clone().cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite("criterion matrix".into()));
                }
                a
            }
        };
        let tiers = match tiers {
            None => Vec::new(),
            Some(layout) => {
                let mut out = Vec::with_capacity(layout.len());
                for idx in layout {
                    if idx.is_empty() {
                        return Err(Error::InvalidArgument("empty tier".into()));
                    }
                    let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| v_ss[(idx[r], idx[c])]);
                    let q = spd_inverse(&sub, &what)?;
                    out.push(Tier { idx, q, threshold: f64::INFINITY });
                }
                out
            }
        };
        let row_total = DVector::from_iterator(k, rows.column_iter().map(|c| c.sum()));
        Ok(Self {
            level,
            kind,
            cols: cols.to_vec(),
            names,
            m1,
            transform,
            rows,
            row_total,
            sizes: exp.sizes().to_vec(),
            s,
            v_ss,
            q,
            threshold: f64::INFINITY,
            tiers,
        })
    }

    /// Compile a config against a population.
    pub fn from_config<R: Rng + ?Sized>(
        exp: &ClusterExperiment,
        cfg: &CriterionConfig,
        m1: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pool = match cfg.level {
            Level::Cluster => exp.c_names(),
            Level::Individual => exp.x_names(),
        };
        let resolve = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    pool.iter().position(|p| p == n).ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown {:?} covariate column '{n}'", cfg.level).to_lowercase())
                    })
                })
                .collect()
        };
        if let Some(tiers) = &cfg.tiers {
            if cfg.kind != Kind::Mahalanobis {
                return Err(Error::InvalidArgument("tiers use Mahalanobis checks; drop 'kind'".into()));
            }
            let groups: Vec<Vec<usize>> = tiers.iter().map(|t| resolve(&t.columns)).collect::<Result<_>>()?;
            if let Some(cols) = &cfg.columns {
                let mut listed = resolve(cols)?;
                let mut flat: Vec<usize> = groups.iter().flatten().copied().collect();
                listed.sort_unstable();
                flat.sort_unstable();
                if listed != flat {
                    return Err(Error::InvalidArgument("tier columns must partition the criterion columns".into()));
                }
            }
            let mut crit = Self::tiered(exp, cfg.level, &groups, m1, cfg.orthogonalize)?;
            for (l, t) in tiers.iter().enumerate() {
                let a = match (&t.threshold, t.target_rate) {
                    (Some(th), None) => th.resolve()?,
                    (None, Some(rate)) if cfg.empirical => {
                        crit.tier_empirical_threshold(l, rate, DEFAULT_EMPIRICAL_DRAWS, rng)?
                    }
                    (None, Some(rate)) => chisq_quantile(check_rate(rate)?, t.columns.len())?,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "tier {} needs exactly one of threshold or target_rate",
                            l + 1
                        )))
                    }
                };
                crit.tiers[l].threshold = a;
            }
            return Ok(crit);
        }
        let cols = match &cfg.columns {
            Some(c) => resolve(c)?,
            None => (0..pool.len()).collect(),
        };
        let mut crit = match cfg.kind {
            Kind::Mahalanobis => {
                let orth = cfg.orthogonalize;
                Self::build(exp, cfg.level, &cols, m1, orth, Form::Mahalanobis, None)?
            }
            Kind::WeightedEuclidean => {
                let w = cfg
                    .weights
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("weighted_euclidean needs 'weights'".into()))?;
                Self::weighted(exp, cfg.level, &cols, m1, &w, cfg.orthogonalize)?
            }
            Kind::GeneralQuadratic => {
                let rows = cfg
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("general_quadratic needs 'matrix'".into()))?;
                let k = rows.len();
                if rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Shape("criterion matrix must be square".into()));
                }
                let a = DMatrix::from_fn(k, k, |r, c| rows[r][c]);
                Self::quadratic(exp, cfg.level, &cols, m1, a, cfg.orthogonalize)?
            }
        };
        crit.kind = cfg.kind;
        match (&cfg.threshold, cfg.target_rate) {
            (Some(th), None) => crit.threshold = th.resolve()?,
            (None, Some(rate)) if cfg.empirical => {
                crit.threshold = super::empirical_threshold(&crit, rate, DEFAULT_EMPIRICAL_DRAWS, rng)?;
            }
            (None, Some(rate)) => crit.calibrate(rate, rng)?,
            _ => return Err(Error::InvalidArgument("criterion needs exactly one of threshold or target_rate".into())),
        }
        Ok(crit)
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    /// Number of covariates `K`.
    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn m(&self) -> usize {
        self.sizes.len()
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    /// Threshold `a` (non-tier criteria).
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Per-tier thresholds.
    pub fn tier_thresholds(&self) -> Vec<f64> {
        self.tiers.iter().map(|t| t.threshold).collect()
    }

    /// Tier layout as positions in `0..K`.
    pub fn tier_layout(&self) -> Vec<Vec<usize>> {
        self.tiers.iter().map(|t| t.idx.clone()).collect()
    }

    pub fn has_tiers(&self) -> bool {
        !self.tiers.is_empty()
    }

    /// The matrix `A` of the quadratic form.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Covariance of the limiting `sqrt(M) d`: `cov_f(S) / (e1 e0)`.
    pub fn v_ss(&self) -> &DMatrix<f64> {
        &self.v_ss
    }

    /// The orthogonalizing map (identity when not orthogonalized).
    /// Scaled design covariates in criterion coordinates (`M x K`).
    pub fn design_covariates(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn with_threshold(mut self, a: f64) -> Self {
        self.threshold = a;
        self
    }

    pub fn set_threshold(&mut self, a: f64) {
        self.threshold = a;
    }

    pub fn with_tier_thresholds(mut self, a: &[f64]) -> Result<Self> {
        if a.len() != self.tiers.len() {
            return Err(Error::Shape(format!("{} thresholds for {} tiers", a.len(), self.tiers.len())));
        }
        for (t, &v) in self.tiers.iter_mut().zip(a) {
            t.threshold = v;
        }
        Ok(self)
    }

    /// Set the threshold for asymptotic acceptance rate `alpha`.
    pub fn calibrate<R: Rng + ?Sized>(&mut self, alpha: f64, rng: &mut R) -> Result<()> {
        if self.has_tiers() {
            return Err(Error::InvalidArgument("tiered criteria take per-tier rates".into()));
        }
        self.threshold = calibrate_threshold(self.kind, &self.q, &self.v_ss, alpha, DEFAULT_CALIBRATION_DRAWS, rng)?;
        Ok(())
    }

    /// Set tier thresholds to chi-square quantiles at the given rates.
    pub fn calibrate_tiers(&mut self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.tiers.len() {
            return Err(Error::Shape(format!("{} rates for {} tiers", rates.len(), self.tiers.len())));
        }
        for (t, &r) in self.tiers.iter_mut().zip(rates) {
            t.threshold = chisq_quantile(check_rate(r)?, t.idx.len())?;
        }
        Ok(())
    }

    fn tier_empirical_threshold<R: Rng + ?Sized>(
        &self,
        tier: usize,
        rate: f64,
        draws: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let rate = check_rate(rate)?;
        let mut perm: Vec<usize> = (0..self.m()).collect();
        let mut stats = Vec::with_capacity(draws);
        for _ in 0..draws {
            super::partial_shuffle(&mut perm, self.m1, rng);
            let d = self.diff_from_treated(&perm[..self.m1]);
            stats.push(self.tier_stat(&self.tiers[tier], &d));
        }
        Ok(empirical_quantile(&mut stats, rate))
    }

    /// Covariate difference in the criterion's coordinates for a treated set.
    pub(crate) fn diff_from_treated(&self, treated: &[usize]) -> DVector<f64> {
        let k = self.dim();
        let mut t = DVector::zeros(k);
        let mut n1 = 0usize;
        for &i in treated {
            for j in 0..k {
                t[j] += self.rows[(i, j)];
            }
            n1 += self.sizes[i];
        }
        let (w1, w0) = match self.level {
            Level::Cluster => (treated.len() as f64, (self.m() - treated.len()) as f64),
            Level::Individual => {
                let n: usize = self.sizes.iter().sum();
                (n1 as f64, (n - n1) as f64)
            }
        };
        let ctrl = &self.row_total - &t;
        t / w1 - ctrl / w0
    }

    fn tier_stat(&self, tier: &Tier, d: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for (r, &i) in tier.idx.iter().enumerate() {
            for (c, &j) in tier.idx.iter().enumerate() {
                s += d[i] * tier.q[(r, c)] * d[j];
            }
        }
        self.m() as f64 * s
    }

    /// Evaluate a covariate difference already in criterion coordinates.
    pub(crate) fn evaluate_diff(&self, d: &DVector<f64>) -> Evaluation {
        if self.tiers.is_empty() {
            let stat = self.m() as f64 * d.dot(&(&self.q * d));
            Evaluation { statistic: stat, tier_statistics: Vec::new(), accepted: stat <= self.threshold }
        } else {
            let ts: Vec<f64> = self.tiers.iter().map(|t| self.tier_stat(t, d)).collect();
            let accepted = ts.iter().zip(&self.tiers).all(|(s, t)| *s <= t.threshold);
            Evaluation { statistic: ts.iter().sum(), tier_statistics: ts, accepted }
        }
    }

    /// Evaluate the assignment treating exactly `treated`.
    pub fn evaluate_treated(&self, treated: &[usize]) -> Evaluation {
        self.evaluate_diff(&self.diff_from_treated(treated))
    }

    /// Degree of violation used to rank rejected draws (`<= 1` means accepted).
    pub(crate) fn violation(&self, e: &Evaluation) -> f64 {
        if self.tiers.is_empty() {
            e.statistic
        } else {
            e.tier_statistics
                .iter()
                .zip(&self.tiers)
                .map(|(s, t)| if t.threshold > 0.0 { s / t.threshold } else { f64::INFINITY })
                .fold(0.0, f64::max)
        }
    }

    pub(crate) fn violation_threshold(&self) -> f64 {
        if self.tiers.is_empty() {
            self.threshold
        } else {
            1.0
        }
    }
}

pub(crate) fn check_rate(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("acceptance rate must lie in (0, 1), got {alpha}")));
    }
    Ok(alpha)
}

/// Empirical `alpha`-quantile (order statistic `ceil(alpha n)`), reordering `v`.
pub(crate) fn empirical_quantile(v: &mut [f64], alpha: f64) -> f64 {
    let n = v.len();
    let rank = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Threshold `a` giving asymptotic acceptance rate `alpha`.
///
/// Mahalanobis: the chi-square quantile with `K` degrees of freedom. Other
/// kinds: the `alpha`-quantile of `sum_k lambda_k eta_k^2`, with `lambda`
/// the eigenvalues of `V^{1/2} A V^{1/2}`, from `draws` Monte Carlo draws
/// (closed form when all eigenvalues coincide).
pub fn calibrate_threshold<R: Rng + ?Sized>(
    kind: Kind,
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let alpha = check_rate(alpha)?;
    let k = v.nrows();
    if kind == Kind::Mahalanobis {
        return chisq_quantile(alpha, k);
    }
    let root = sym_sqrt(v, "imbalance covariance")?;
    let (lambda, _) = sym_eigen(&(&root * a * &root));
    let top = lambda.max();
    if lambda.iter().any(|&l| !(l > 1e-12 * top.max(0.0))) {
        return Err(Error::NotPositiveDefinite("V^1/2 A V^1/2 has a nonpositive eigenvalue".into()));
    }
    if (top - lambda.min()) <= 1e-12 * top {
        return Ok(lambda.mean() * chisq_quantile(alpha, k)?);
    }
    if draws < 1000 {
        return Err(Error::InvalidArgument("threshold calibration needs at least 1000 draws".into()));
    }
    let mut sims: Vec<f64> = (0..draws)
        .map(|_| {
            lambda
                .iter()
                .map(|&l| {
                    let e: f64 = rng.sample(StandardNormal);
                    l * e * e
                })
                .sum()
        })
        .collect();
    Ok(empirical_quantile(&mut sims, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{draw_complete, Assignment};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(m: usize, seed: u64) -> ClusterExperiment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..5)).collect();
        let n: usize = sizes.iter().sum();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DMatrix::from_fn(m, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        ClusterExperiment::new(sizes, x, c).unwrap()
    }

    #[test]
    fn calibration_reduces_to_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = spd_inverse(&v, "v").unwrap();
        let t = calibrate_threshold(Kind::GeneralQuadratic, &a, &v, 0.001, 10_000, &mut rng).unwrap();
        assert_relative_eq!(t, 0.002_001_000_667_167_068, max_relative = 1e-9);
        let v1 = DMatrix::from_element(1, 1, 3.0);
        let a1 = DMatrix::from_element(1, 1, 1.0 / 3.0);
        let t1 = calibrate_threshold(Kind::WeightedEuclidean, &a1, &v1, 0.001, 10_000, &mut rng).unwrap();
        assert_relative_eq!(t1, 1.5708e-6, max_relative = 1e-4);
    }

    #[test]
    fn calibration_mc_hits_target_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = DMatrix::identity(3, 3);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 5.0]));
        let t = calibrate_threshold(Kind::WeightedEuclidean, &a, &v, 0.05, 2_000_000, &mut rng).unwrap();
        // independent check of the rate at the returned threshold
        let n = 400_000;
        let hits = (0..n)
            .filter(|_| {
                let s: f64 = [1.0, 2.0, 5.0]
                    .iter()
                    .map(|l| {
                        let e: f64 = rng.sample(StandardNormal);
                        l * e * e
                    })
                    .sum();
                s <= t
            })
            .count();
        assert_relative_eq!(hits as f64 / n as f64, 0.05, max_relative = 0.03);
    }

    #[test]
    fn mahalanobis_statistic_hand_value() {
        // K=1, cov_f = 1, e1 = e0 = 1/2, M = 4, d = 1 gives 1
        let c = DMatrix::from_column_slice(4, 1, &[1.5, 0.5, -0.5, -1.5]);
        let scale = (finite_pop_cov(&c, &c).unwrap()[(0, 0)]).sqrt();
        let e = ClusterExperiment::new(vec![1; 4], DMatrix::zeros(4, 0), c / scale).unwrap();
        let crit = BalanceCriterion::mahalanobis(&e, Level::Cluster, &[0], 2).unwrap();
        let d = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(crit.evaluate_diff(&d).statistic, 1.0, epsilon = 1e-12);
        assert_eq!(crit.evaluate_diff(&DVector::zeros(1)).statistic, 0.0);
    }

    #[test]
    fn fast_difference_matches_direct() {
        let e = toy(12, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for level in [Level::Cluster, Level::Individual] {
            let crit = BalanceCriterion::mahalanobis(&e, level, &[0, 1], 5).unwrap();
            for _ in 0..20 {
                let z = draw_complete(12, 5, &mut rng).unwrap();
                let treated: Vec<usize> = (0..12).filter(|&i| z.is_treated(i)).collect();
                let fast = crit.diff_from_treated(&treated);
                let slow = crate::design::covariate_diff(&e, &z, level, &[0, 1]).unwrap();
                assert!((fast - slow).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonalized_v_is_diagonal() {
        let e = toy(30, 2);
        let crit = BalanceCriterion::weighted(&e, Level::Cluster, &[0, 1, 2], 10, &[1.0, 1.0, 1.0], true).unwrap();
        let v = crit.v_ss();
        let off = (v - DMatrix::from_diagonal(&v.diagonal())).amax();
        assert!(off < 1e-10 * v.diagonal().amax());
        assert_eq!(crit.kind(), Kind::WeightedEuclidean);
    }

    #[test]
    fn config_round_trip_and_unknown_column() {
        let e = toy(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let json = r#"{"level":"cluster","kind":"mahalanobis","columns":["c1","c3"],"target_rate":0.1}"#;
        let cfg: CriterionConfig = serde_json::from_str(json).unwrap();
        let crit = BalanceCriterion::from_config(&e, &cfg, 5, &mut rng).unwrap();
        assert_relative_eq!(crit.threshold(), chisq_quantile(0.1, 2).unwrap());
        let bad: CriterionConfig =
            serde_json::from_str(r#"{"level":"cluster","columns":["nope"],"threshold":"inf"}"#).unwrap();
        let err = BalanceCriterion::from_config(&e, &bad, 5, &mut rng).unwrap_err();
        assert!(err.to_string().contains("nope"));
        let inf: CriterionConfig = serde_json::from_str(r#"{"level":"individual","threshold":"inf"}"#).unwrap();
        let crit = BalanceCriterion::from_config(&e, &inf, 5, &mut rng).unwrap();
        assert!(crit.threshold().is_infinite());
        let _ = Assignment::new(vec![1, 0]).unwrap();
    }

    #[test]
    fn tiers_config_partitions_columns() {
        let e = toy(20, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let json = r#"{"level":"cluster","orthogonalize":true,
            "tiers":[{"columns":["c2"],"target_rate":0.5},{"columns":["c1","c3"],"target_rate":0.4}]}"#;
        let cfg: CriterionConfig = serde_json::from_str(json).unwrap();
        let crit = BalanceCriterion::from_config(&e, &cfg, 10, &mut rng).unwrap();
        assert_eq!(crit.tier_layout(), vec![vec![0], vec![1, 2]]);
        assert_relative_eq!(crit.tier_thresholds()[1], chisq_quantile(0.4, 2).unwrap());
        assert_eq!(crit.columns(), &[1, 0, 2]);
    }
}
