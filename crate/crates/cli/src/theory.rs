use std::path::PathBuf;

use clusterre::design::{optimal_weight_matrix, BalanceCriterion, CriterionConfig};
use clusterre::fpstats::linalg::inverse_quadratic_form;
use clusterre::fpstats::ClusterExperiment;
use clusterre::simharness::{generate_population, read_units_path, stream_rng, ScenarioConfig};
use clusterre::theory::{compare_designs, correlated_pair, nu, p_k};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{manifest_path, ClippingCounters, ManifestBuilder, SCHEMA_VERSION};
use crate::{parse_json, read_text, write_json, CliError, CliResult, TheoryArgs};

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TheoryConfig {
    /// Two covariates with covariance `[[4, d], [d, 4]]` and `V_ts = (1, 1)`.
    CorrelatedPair { deltas: Vec<f64> },
    /// Criteria evaluated on given moments.
    Moments { v_tt: f64, v_ts: Vec<f64>, v_ss: Vec<Vec<f64>>, alpha: f64, criteria: Vec<MomentCriterion> },
    /// Criteria compiled against a population with both potential outcomes.
    Compare {
        population: PopulationSource,
        #[serde(default)]
        treated: Option<usize>,
        alpha: f64,
        designs: Vec<NamedCriterion>,
        /// Also compare Hajek on `x` with HT on `(n, x~)`.
        #[serde(default)]
        level_check: bool,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentCriterion {
    label: String,
    /// Diagonal weights; Mahalanobis when neither weights nor matrix is given.
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    matrix: Option<Vec<Vec<f64>>>,
    /// Use the optimal diagonal weights.
    #[serde(default)]
    optimal: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedCriterion {
    label: String,
    criterion: CriterionConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
enum PopulationSource {
    Data {
        path: PathBuf,
    },
    Preset {
        id: u8,
        #[serde(default)]
        seed: Option<u64>,
    },
    Scenario {
        config: ScenarioConfig,
    },
}

#[derive(Debug, Serialize)]
struct MomentRow {
    label: String,
    k: usize,
    r2: f64,
    nu: f64,
    p_k: f64,
    leading_variance: f64,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::Usage(format!("{what} must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

fn moments_report(
    v_tt: f64,
    v_ts: &[f64],
    v_ss: &[Vec<f64>],
    alpha: f64,
    criteria: &[MomentCriterion],
) -> CliResult<serde_json::Value> {
    let vss = matrix(v_ss, "v_ss")?;
    let k = vss.nrows();
    if v_ts.len() != k {
        return Err(CliError::Usage(format!("v_ts has {} entries, v_ss is {k}x{k}", v_ts.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(v_tt > 0.0) {
        return Err(CliError::Usage("need 0 < alpha < 1 and v_tt > 0".into()));
    }
    let vts = DVector::from_column_slice(v_ts);
    let r2 = inverse_quadratic_form(&vss, &vts, "v_ss")? / v_tt;
    let pk = p_k(k)?;
    let rows = criteria
        .iter()
        .map(|c| {
            let a = match (&c.weights, &c.matrix, c.optimal) {
                (None, None, false) => clusterre::fpstats::linalg::spd_inverse(&vss, "v_ss")?,
                (Some(w), None, false) => {
                    if w.len() != k {
                        return Err(CliError::Usage(format!("{}: {} weights for {k} covariates", c.label, w.len())));
                    }
                    DMatrix::from_diagonal(&DVector::from_column_slice(w))
                }
                (None, Some(m), false) => matrix(m, &c.label)?,
                (None, None, true) => optimal_weight_matrix(&vts, &vss)?,
                _ => {
                    return Err(CliError::Usage(format!("{}: give at most one of weights, matrix or optimal", c.label)))
                }
            };
            let nu_a = nu(&vts, &vss, &a)?;
            Ok(MomentRow {
                label: c.label.clone(),
                k,
                r2,
                nu: nu_a,
                p_k: pk,
                leading_variance: v_tt * (1.0 - r2 + r2 * pk * nu_a * alpha.powf(2.0 / k as f64)),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(json!({ "schema_version": SCHEMA_VERSION, "kind": "moments", "alpha": alpha, "r2": r2, "rows": rows }))
}

fn load_population(
    src: PopulationSource,
    data: Option<&PathBuf>,
    base: &std::path::Path,
) -> CliResult<ClusterExperiment> {
    if let Some(p) = data {
        return Ok(read_units_path(p)?.experiment);
    }
    match src {
        PopulationSource::Data { path } => {
            let p = if path.is_relative() { base.join(path) } else { path };
            Ok(read_units_path(&p)?.experiment)
        }
        PopulationSource::Preset { id, seed } => {
            let mut cfg = ScenarioConfig::preset(id)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut rng = stream_rng(cfg.seed, u64::MAX);
            Ok(generate_population(&cfg, &mut rng)?.experiment)
        }
        PopulationSource::Scenario { config } => {
            let mut rng = stream_rng(config.seed, u64::MAX);
            Ok(generate_population(&config, &mut rng)?.experiment)
        }
    }
}

pub fn run(args: &TheoryArgs) -> CliResult<()> {
    let text = read_text(&args.config)?;
    let cfg: TheoryConfig = parse_json(&args.config, &text)?;
    let mut manifest = ManifestBuilder::new("theory", &text, args.seed.unwrap_or(0));
    let report = match cfg {
        TheoryConfig::CorrelatedPair { deltas } => {
            let rows = deltas.iter().map(|&d| correlated_pair(d)).collect::<clusterre::Result<Vec<_>>>()?;
            json!({ "schema_version": SCHEMA_VERSION, "kind": "correlated_pair", "rows": rows })
        }
        TheoryConfig::Moments { v_tt, v_ts, v_ss, alpha, criteria } => {
            moments_report(v_tt, &v_ts, &v_ss, alpha, &criteria)?
        }
        TheoryConfig::Compare { population, treated, alpha, designs, level_check, seed } => {
            let seed = args.seed.unwrap_or(seed);
            manifest.seed = seed;
            let base = args.config.parent().unwrap_or(std::path::Path::new("."));
            let exp = load_population(population, args.data.as_ref(), base)?;
            let m1 = treated.unwrap_or(exp.m() / 2);
            let mut rng = stream_rng(seed, 1);
            let compiled = designs
                .iter()
                .map(|d| Ok((d.label.clone(), BalanceCriterion::from_config(&exp, &d.criterion, m1, &mut rng)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let mut cmp = compare_designs(&exp, &compiled, alpha)?;
            if !level_check {
                cmp.level_check = None;
            }
            let verdict = cmp.level_check.map(|c| if c.holds { "holds" } else { "fails" });
            json!({
                "schema_version": SCHEMA_VERSION,
                "kind": "compare",
                "clusters": exp.m(),
                "treated": m1,
                "alpha": alpha,
                "rows": cmp.rows,
                "level_check": cmp.level_check,
                "level_check_verdict": verdict,
            })
        }
    };
    write_json(&args.out, &report)?;
    manifest.finish(
        &manifest_path(&args.out),
        std::slice::from_ref(&args.out),
        Vec::new(),
        ClippingCounters::default(),
        serde_json::Value::Null,
    )
}
