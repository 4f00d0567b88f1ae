//! Monte Carlo replication engine.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{DesignKind, Method};
use super::scenario::{generate_population, Population, ScenarioConfig};
use crate::design::{draw_complete, optimal_weight_matrix, rerandomize, Assignment, BalanceCriterion, Level};
use crate::error::{Error, Result};
use crate::estimate::{estimate, Correction};
use crate::fpstats::ClusterExperiment;
use crate::inference::{
    improved_interval_pooled, improved_variance_haj, improved_variance_ht, normal_interval, ConfidenceInterval,
    ConstrainedPool, LawShape,
};
use crate::theory::population_moments;

const POPULATION_STREAM: u64 = u64::MAX;
const CALIBRATION_STREAM: u64 = u64::MAX - 1;

/// Generator for stream `stream` of master seed `seed`. Replication `r` uses
/// stream `r`, so results do not depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything `run_study` needs besides the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub m1: usize,
    pub alpha: f64,
    pub level: f64,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub mc_size: usize,
    pub max_draws: u64,
    pub seed: u64,
}

impl From<&ScenarioConfig> for StudySettings {
    fn from(c: &ScenarioConfig) -> Self {
        Self {
            m1: c.m1,
            alpha: c.alpha,
            level: c.level,
            replications: c.replications,
            methods: c.methods.clone(),
            mc_size: c.mc_size,
            max_draws: c.max_draws,
            seed: c.seed,
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub cp_normal: f64,
    pub len_normal: f64,
    pub cp_improved: Option<f64>,
    pub len_improved: Option<f64>,
    /// Replications that produced an estimate.
    pub replications: usize,
    pub failures: usize,
    pub improved_failures: usize,
    /// Realized acceptance rate of the design, `accepted / drawn`.
    pub acceptance_rate: Option<f64>,
    pub v_clipped: usize,
    pub r2_clipped: usize,
}

/// Per-design diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub design: String,
    pub threshold: f64,
    pub acceptance_rate: f64,
    pub mean_draws: f64,
    pub failures: usize,
    /// Weights of a weighted Euclidean design.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub tau: f64,
    pub rows: Vec<MetricsRow>,
    pub designs: Vec<DesignDiagnostics>,
}

impl StudyReport {
    pub fn row(&self, method: Method) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method.name())
    }
}

/// Compiled designs and shared law draws.
pub struct PreparedDesigns {
    criteria: BTreeMap<DesignKind, BalanceCriterion>,
    pools: BTreeMap<DesignKind, ConstrainedPool>,
    weights: BTreeMap<DesignKind, Vec<f64>>,
}

impl PreparedDesigns {
    pub fn criterion(&self, d: DesignKind) -> Option<&BalanceCriterion> {
        self.criteria.get(&d)
    }
}

fn all_cols(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Build and calibrate the criteria used by `methods`. Weighted designs use
/// the optimal weights from the population moments of the unadjusted estimator.
pub fn prepare_designs(exp: &ClusterExperiment, s: &StudySettings) -> Result<PreparedDesigns> {
    let mut rng = stream_rng(s.seed, CALIBRATION_STREAM);
    let mut criteria = BTreeMap::new();
    let mut weights = BTreeMap::new();
    let mut needed: Vec<DesignKind> = s.methods.iter().map(|m| m.design()).collect();
    needed.sort();
    needed.dedup();
    for d in needed.iter().copied() {
        let (level, cols) = match d {
            DesignKind::Complete => continue,
            DesignKind::MahalanobisCluster | DesignKind::WeightedCluster => (Level::Cluster, all_cols(exp.c().ncols())),
            DesignKind::MahalanobisIndividual | DesignKind::WeightedIndividual => {
                (Level::Individual, all_cols(exp.x().ncols()))
            }
        };
        let mut crit = BalanceCriterion::mahalanobis(exp, level, &cols, s.m1)?;
        if matches!(d, DesignKind::WeightedCluster | DesignKind::WeightedIndividual) {
            let mom = population_moments(exp, level, crit.design_covariates(), s.m1, &[])?;
            let w = optimal_weight_matrix(&mom.v_ts_vector(), &mom.v_ss_matrix())?;
            let w: Vec<f64> = w.diagonal().iter().copied().collect();
            crit = BalanceCriterion::weighted(exp, level, &cols, s.m1, &w, false)?;
            weights.insert(d, w);
        }
        crit.calibrate(s.alpha, &mut rng)?;
        criteria.insert(d, crit);
    }
    let mut pools = BTreeMap::new();
    for d in needed {
        if s.methods.iter().any(|m| m.design() == d && m.has_improved_interval()) {
            let shape = LawShape::from_criterion(&criteria[&d])?;
            pools.insert(d, ConstrainedPool::new(&shape, s.mc_size, &mut rng)?);
        }
    }
    Ok(PreparedDesigns { criteria, pools, weights })
}

#[derive(Debug, Clone)]
struct MethodOutcome {
    tau_hat: f64,
    normal: ConfidenceInterval,
    improved: Option<std::result::Result<(ConfidenceInterval, bool, bool), String>>,
}

#[derive(Debug, Clone)]
struct Replicate {
    draws: BTreeMap<DesignKind, Option<u64>>,
    outcomes: Vec<Option<MethodOutcome>>,
}

fn replicate(exp: &ClusterExperiment, p: &PreparedDesigns, s: &StudySettings, r: u64) -> Replicate {
    let mut rng = stream_rng(s.seed, r);
    let mut assignments: BTreeMap<DesignKind, Assignment> = BTreeMap::new();
    let mut draws = BTreeMap::new();
    let mut needed: Vec<DesignKind> = s.methods.iter().map(|m| m.design()).collect();
    needed.sort();
    needed.dedup();
    for d in needed {
        let drawn = match p.criteria.get(&d) {
            None => draw_complete(exp.m(), s.m1, &mut rng).map(|a| (a, 1)),
            Some(c) => rerandomize(c, s.max_draws, &mut rng).map(|x| (x.assignment, x.draws)),
        };
        match drawn {
            Ok((a, n)) => {
                assignments.insert(d, a);
                draws.insert(d, Some(n));
            }
            Err(_) => {
                draws.insert(d, None);
            }
        }
    }
    let outcomes = s
        .methods
        .iter()
        .map(|&m| assignments.get(&m.design()).and_then(|z| run_method(exp, p, s, m, z).ok()))
        .collect();
    Replicate { draws, outcomes }
}

fn run_method(
    exp: &ClusterExperiment,
    p: &PreparedDesigns,
    s: &StudySettings,
    method: Method,
    z: &Assignment,
) -> Result<MethodOutcome> {
    let y = exp.reveal(z.z())?;
    let est = method.estimator();
    let cols = match (est.is_adjusted(), est.is_cluster_level()) {
        (false, _) => Vec::new(),
        (true, true) => all_cols(exp.c().ncols()),
        (true, false) => all_cols(exp.x().ncols()),
    };
    let report = estimate(exp, z, &y, est, &cols, Correction::None)?;
    let normal = normal_interval(&report, s.level)?;
    let improved = if method.has_improved_interval() {
        let d = method.design();
        let crit = &p.criteria[&d];
        let res = if est.is_cluster_level() {
            improved_variance_ht(exp, z, &y, &cols, crit.design_covariates())
        } else {
            improved_variance_haj(exp, z, &y, &cols, crit.design_covariates())
        }
        .and_then(|ie| {
            let ci = improved_interval_pooled(&ie, exp.m(), &p.pools[&d], s.level)?;
            Ok((ci, ie.v_clipped, ie.r2_clipped))
        })
        .map_err(|e| e.to_string());
        Some(res)
    } else {
        None
    };
    Ok(MethodOutcome { tau_hat: report.tau_hat, normal, improved })
}

/// Run `s.replications` replications on a fixed population.
pub fn run_study(exp: &ClusterExperiment, s: &StudySettings) -> Result<StudyReport> {
    if s.replications == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    if s.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods listed".into()));
    }
    let tau = exp.tau()?;
    let prepared = prepare_designs(exp, s)?;
    let reps: Vec<Replicate> =
        (0..s.replications as u64).into_par_iter().map(|r| replicate(exp, &prepared, s, r)).collect();
    Ok(aggregate(tau, &prepared, s, &reps))
}

fn aggregate(tau: f64, p: &PreparedDesigns, s: &StudySettings, reps: &[Replicate]) -> StudyReport {
    let mut designs = Vec::new();
    let mut rates: BTreeMap<DesignKind, f64> = BTreeMap::new();
    let mut kinds: Vec<DesignKind> = s.methods.iter().map(|m| m.design()).collect();
    kinds.sort();
    kinds.dedup();
    for d in kinds {
        let ok: Vec<u64> = reps.iter().filter_map(|r| r.draws.get(&d).copied().flatten()).collect();
        let total: u64 = ok.iter().sum();
        let rate = if total > 0 { ok.len() as f64 / total as f64 } else { 0.0 };
        rates.insert(d, rate);
        designs.push(DesignDiagnostics {
            design: d.label().to_string(),
            threshold: p.criteria.get(&d).map_or(f64::INFINITY, |c| c.threshold()),
            acceptance_rate: rate,
            mean_draws: if ok.is_empty() { f64::NAN } else { total as f64 / ok.len() as f64 },
            failures: reps.len() - ok.len(),
            weights: p.weights.get(&d).cloned(),
        });
    }
    let rows = s
        .methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let outs: Vec<&MethodOutcome> = reps.iter().filter_map(|r| r.outcomes[j].as_ref()).collect();
            let n = outs.len();
            let nf = n.max(1) as f64;
            let mean = outs.iter().map(|o| o.tau_hat).sum::<f64>() / nf;
            let sd = (outs.iter().map(|o| (o.tau_hat - mean).powi(2)).sum::<f64>() / nf).sqrt();
            let rmse = (outs.iter().map(|o| (o.tau_hat - tau).powi(2)).sum::<f64>() / nf).sqrt();
            let cp_normal = outs.iter().filter(|o| o.normal.covers(tau)).count() as f64 / nf;
            let len_normal = outs.iter().map(|o| o.normal.length()).sum::<f64>() / nf;
            let mut row = MetricsRow {
                method: m.name().to_string(),
                bias: mean - tau,
                sd,
                rmse,
                cp_normal,
                len_normal,
                cp_improved: None,
                len_improved: None,
                replications: n,
                failures: reps.len() - n,
                improved_failures: 0,
                acceptance_rate: m.design().is_rerandomized().then(|| rates[&m.design()]),
                v_clipped: 0,
                r2_clipped: 0,
            };
            if m.has_improved_interval() {
                let imp: Vec<&(ConfidenceInterval, bool, bool)> =
                    outs.iter().filter_map(|o| o.improved.as_ref().and_then(|r| r.as_ref().ok())).collect();
                let ni = imp.len().max(1) as f64;
                row.improved_failures = n - imp.len();
                row.cp_improved = Some(imp.iter().filter(|c| c.0.covers(tau)).count() as f64 / ni);
                row.len_improved = Some(imp.iter().map(|c| c.0.length()).sum::<f64>() / ni);
                row.v_clipped = imp.iter().filter(|c| c.1).count();
                row.r2_clipped = imp.iter().filter(|c| c.2).count();
            }
            row
        })
        .collect();
    StudyReport { tau, rows, designs }
}

/// Generate the scenario's population and run the study on it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(Population, StudyReport)> {
    let mut rng = stream_rng(cfg.seed, POPULATION_STREAM);
    let pop = generate_population(cfg, &mut rng)?;
    let report = run_study(&pop.experiment, &StudySettings::from(cfg))?;
    Ok((pop, report))
}

/// Metrics as CSV, one row per method.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
