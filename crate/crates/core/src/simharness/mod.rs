//! Synthetic populations and the Monte Carlo study engine.

mod data;
mod factorial;
mod methods;
mod scenario;
mod study;

pub use data::{impute_potential_outcomes, read_units, read_units_path, write_population_csv, UnitData};
pub use factorial::{factorial_study, write_factorial_csv, FactorialGrid, FactorialRow, SizeSpread};
pub use methods::{DesignKind, Method};
pub use scenario::{
    exchangeable, generate_population, ClusterEffect, Model, OutcomeFn, Population, ScenarioConfig, SizeRange,
};
pub use study::{
    prepare_designs, run_scenario, run_study, stream_rng, write_metrics_csv, DesignDiagnostics, MetricsRow,
    PreparedDesigns, StudyReport, StudySettings,
};

use serde::{Deserialize, Serialize};

/// A simulation config file: one scenario, a preset, or a factorial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum SimulationConfig {
    Scenario(ScenarioConfig),
    /// A built-in scenario, optionally overriding replications and seed.
    Preset {
        id: u8,
        #[serde(default)]
        replications: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Factorial(FactorialGrid),
    /// A fixed population read from a unit CSV with `y0` and `y1` columns.
    Data(DataStudy),
}

/// Study on a population supplied as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataStudy {
    /// Unit CSV, relative paths resolved against the config file.
    pub data: std::path::PathBuf,
    /// Treated clusters; half of them (rounded down) when absent.
    #[serde(default)]
    pub m1: Option<usize>,
    pub replications: usize,
    pub alpha: f64,
    #[serde(default = "scenario::default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    #[serde(default = "scenario::default_mc")]
    pub mc_size: usize,
    #[serde(default = "scenario::default_max_draws")]
    pub max_draws: u64,
}

impl DataStudy {
    pub fn settings(&self, m: usize) -> StudySettings {
        StudySettings {
            m1: self.m1.unwrap_or(m / 2),
            alpha: self.alpha,
            level: self.level,
            replications: self.replications,
            methods: self.methods.clone(),
            mc_size: self.mc_size,
            max_draws: self.max_draws,
            seed: self.seed,
        }
    }
}

impl SimulationConfig {
    /// Resolve presets into a concrete scenario.
    pub fn resolve(self) -> crate::Result<SimulationConfig> {
        match self {
            SimulationConfig::Preset { id, replications, seed } => {
                let mut cfg = ScenarioConfig::preset(id)?;
                if let Some(r) = replications {
                    cfg.replications = r;
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                Ok(SimulationConfig::Scenario(cfg))
            }
            other => Ok(other),
        }
    }
}
