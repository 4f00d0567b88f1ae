//! Full factorial study over number of clusters, size spread, outcome link,
//! covariate dimension and acceptance rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::Method;
use super::scenario::{generate_population, Model, OutcomeFn, ScenarioConfig, SizeRange};
use super::study::{run_study, stream_rng, StudySettings};
use crate::error::{Error, Result};

/// Spread of the cluster sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeSpread {
    /// Sizes uniform on `2..=16`.
    H,
    /// Sizes uniform on `4..=10`.
    L,
}

impl SizeSpread {
    pub fn range(self) -> SizeRange {
        match self {
            SizeSpread::H => SizeRange { lo: 2, hi: 16 },
            SizeSpread::L => SizeRange { lo: 4, hi: 10 },
        }
    }
}

fn default_level() -> f64 {
    0.05
}

fn default_max_draws() -> u64 {
    crate::design::DEFAULT_MAX_DRAWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorialGrid {
    pub m: Vec<usize>,
    pub vn: Vec<SizeSpread>,
    #[serde(rename = "fn")]
    pub outcome: Vec<OutcomeFn>,
    pub k: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Population seeds per cell.
    pub seeds: Vec<u64>,
    pub replications: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_draws")]
    pub max_draws: u64,
}

impl FactorialGrid {
    /// `M = 20, 24, ..., 80`, both spreads, both links, `K = 1, 5`,
    /// `alpha = 0.001, 0.1`, 100 seeds, 1000 replications.
    pub fn full() -> Self {
        Self {
            m: (0..16).map(|k| 20 + 4 * k).collect(),
            vn: vec![SizeSpread::H, SizeSpread::L],
            outcome: vec![OutcomeFn::Linear, OutcomeFn::Cubic],
            k: vec![1, 5],
            alpha: vec![0.001, 0.1],
            seeds: (0..100).collect(),
            replications: 1000,
            level: 0.05,
            seed: 0,
            max_draws: default_max_draws(),
        }
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &vn in &self.vn {
                for &outcome in &self.outcome {
                    for &k in &self.k {
                        for &alpha in &self.alpha {
                            for &seed in &self.seeds {
                                out.push(Cell { m, vn, outcome, k, alpha, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty()
            || self.vn.is_empty()
            || self.outcome.is_empty()
            || self.k.is_empty()
            || self.alpha.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidArgument("every factor needs at least one level".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    m: usize,
    vn: SizeSpread,
    outcome: OutcomeFn,
    k: usize,
    alpha: f64,
    seed: u64,
}

/// Long-format result for one cell and seed: metrics of rerandomization plus
/// cluster-level adjustment, and its RMSE reduction against the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialRow {
    pub m: usize,
    pub vn: SizeSpread,
    #[serde(rename = "fn")]
    pub outcome: OutcomeFn,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub method: String,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub cp_normal: f64,
    pub len_normal: f64,
    pub rmse_ht: f64,
    pub rmse_haj: f64,
    /// `100 (1 - RMSE / RMSE_HT)`.
    pub reduction_vs_ht: f64,
    pub reduction_vs_haj: f64,
    pub failures: usize,
}

/// Mix the master seed with a cell index into an independent seed.
fn mix(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run every cell of the grid. Rows come out in grid order.
pub fn factorial_study(grid: &FactorialGrid) -> Result<Vec<FactorialRow>> {
    grid.validate()?;
    let methods = vec![Method::Ht, Method::Haj, Method::ReMCAdj];
    let cells = grid.cells();
    cells
        .par_iter()
        .map(|c| {
            let cell_seed = mix(grid.seed, mix(c.seed, ((c.m as u64) << 32) ^ ((c.k as u64) << 16)));
            let cfg = ScenarioConfig {
                name: String::new(),
                m: c.m,
                m1: c.m / 2,
                sizes: c.vn.range(),
                k: c.k,
                model: Model::Factorial { outcome: c.outcome },
                replications: grid.replications,
                alpha: c.alpha,
                seed: cell_seed,
                methods: methods.clone(),
                level: grid.level,
                mc_size: crate::inference::MIN_MC_SIZE,
                max_draws: grid.max_draws,
            };
            // population depends on (M, vn, fn, K, seed), not on alpha
            let pop_seed = mix(cell_seed, (c.vn as u64) << 1 | c.outcome as u64);
            let mut rng = stream_rng(pop_seed, u64::MAX);
            let pop = generate_population(&cfg, &mut rng)?;
            let report = run_study(&pop.experiment, &StudySettings::from(&cfg))?;
            let get = |m: Method| report.row(m).expect("method was requested");
            let (ht, haj, re) = (get(Method::Ht), get(Method::Haj), get(Method::ReMCAdj));
            Ok(FactorialRow {
                m: c.m,
                vn: c.vn,
                outcome: c.outcome,
                k: c.k,
                alpha: c.alpha,
                seed: c.seed,
                method: re.method.clone(),
                bias: re.bias,
                sd: re.sd,
                rmse: re.rmse,
                cp_normal: re.cp_normal,
                len_normal: re.len_normal,
                rmse_ht: ht.rmse,
                rmse_haj: haj.rmse,
                reduction_vs_ht: 100.0 * (1.0 - re.rmse / ht.rmse),
                reduction_vs_haj: 100.0 * (1.0 - re.rmse / haj.rmse),
                failures: re.failures,
            })
        })
        .collect()
}

pub fn write_factorial_csv<W: std::io::Write>(rows: &[FactorialRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
