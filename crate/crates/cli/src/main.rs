//! `clusterre`: design and analysis of cluster-randomized experiments.

mod analyze;
mod design;
mod manifest;
mod simulate;
mod theory;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "clusterre", version, about = "Cluster rerandomization: design, analysis, simulation and theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for simulations.
    #[arg(long, global = true, env = "CLUSTERRE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw an accepted assignment for a set of clusters.
    Design(DesignArgs),
    /// Estimate the treatment effect and its intervals from observed data.
    Analyze(AnalyzeArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Efficiency calculations for designs.
    Theory(TheoryArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Unit CSV with `cluster_id` and covariates.
    #[arg(long)]
    pub data: PathBuf,
    /// Assignment CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Unit CSV with `cluster_id`, covariates, `y` and `z`.
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fill missing outcomes from arm-wise linear fits and write the imputed population.
    #[arg(long)]
    pub impute: bool,
    /// Monte Carlo draws for the improved interval.
    #[arg(long, default_value_t = clusterre::inference::DEFAULT_MC_SIZE)]
    pub mc_size: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's Monte Carlo size for improved intervals.
    #[arg(long)]
    pub mc_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Unit CSV with `y0` and `y1`, for population comparisons.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configs or data: exit 1.
    Usage(String),
    /// Numerical or feasibility failure: exit 2.
    Numerical(String),
}

impl From<clusterre::Error> for CliError {
    fn from(e: clusterre::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Read a file, naming it in the error.
pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parse a JSON config; errors carry line and column.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match cli.command {
        Command::Design(a) => design::run(&a),
        Command::Analyze(a) => analyze::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Theory(a) => theory::run(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
