use std::collections::BTreeMap;

use clusterre::design::{balance_statistic, BalanceCriterion, CriterionConfig, Level};
use clusterre::estimate::{estimate, Correction, Estimator};
use clusterre::inference::{
    improved_interval, improved_variance_haj, improved_variance_ht, normal_interval, Components, LawShape,
};
use clusterre::simharness::{impute_potential_outcomes, read_units_path, stream_rng, write_population_csv};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{manifest_path, sibling, ClippingCounters, ManifestBuilder, SCHEMA_VERSION};
use crate::{parse_json, read_text, write_json, AnalyzeArgs, CliError, CliResult};

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    estimator: Estimator,
    /// Adjustment covariates: cluster names for `ht_adj`, unit names for `haj_adj`.
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    correction: Correction,
    #[serde(default = "default_level")]
    level: f64,
    /// The design-stage criterion; enables the improved interval.
    #[serde(default)]
    design: Option<CriterionConfig>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Interval {
    lower: f64,
    upper: f64,
    length: f64,
}

#[derive(Debug, Serialize)]
struct Improved {
    interval: Interval,
    v_hat: f64,
    r2_hat: f64,
    r2_raw: f64,
    mu_hat: Vec<f64>,
    v_clipped: bool,
    r2_clipped: bool,
    components: Components,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    estimator: Estimator,
    clusters: usize,
    units: usize,
    treated_clusters: usize,
    tau_hat: f64,
    se: f64,
    variance_hat: f64,
    correction: Correction,
    level: f64,
    coefficients: BTreeMap<String, f64>,
    normal_interval: Interval,
    #[serde(skip_serializing_if = "Option::is_none")]
    improved_interval: Option<Improved>,
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    imputation: Option<serde_json::Value>,
    warnings: Vec<String>,
}

fn interval(lower: f64, upper: f64) -> Interval {
    Interval { lower, upper, length: upper - lower }
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let text = read_text(&args.config)?;
    let cfg: AnalyzeConfig = parse_json(&args.config, &text)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let manifest = ManifestBuilder::new("analyze", &text, seed);
    let mut outputs = vec![args.out.clone()];
    let mut warnings = Vec::new();

    let data = read_units_path(&args.data)?;
    let z = data.assignment()?.clone();
    let mut exp = data.experiment.clone();
    let raw_y = data.y.clone().ok_or_else(|| CliError::Usage("data has no 'y' column".into()))?;
    let missing = raw_y.iter().filter(|v| !v.is_finite()).count();
    let mut imputation = None;
    let y: Vec<f64> = if args.impute {
        let (y0, y1) = impute_potential_outcomes(&exp, &raw_y, &z)?;
        let unit_z = clusterre::estimate::unit_treatment(&exp, &z);
        let filled: Vec<f64> = (0..raw_y.len()).map(|i| if unit_z[i] == 1 { y1[i] } else { y0[i] }).collect();
        exp = exp.with_potential_outcomes(y0, y1)?;
        let pop_path = sibling(&args.out, "population.csv");
        write_population_csv(&exp, std::fs::File::create(&pop_path)?)?;
        outputs.push(pop_path.clone());
        imputation = Some(json!({
            "missing_outcomes_filled": missing,
            "tau_imputed_population": exp.tau()?,
            "population_file": pop_path.display().to_string(),
        }));
        filled
    } else {
        data.outcomes()?.to_vec()
    };

    let pool = if cfg.estimator.is_cluster_level() { exp.c_names() } else { exp.x_names() };
    let cols: Vec<usize> = match (&cfg.covariates, cfg.estimator.is_adjusted()) {
        (Some(names), true) => names
            .iter()
            .map(|n| {
                pool.iter()
                    .position(|p| p == n)
                    .ok_or_else(|| CliError::Usage(format!("unknown covariate '{n}' (available: {})", pool.join(", "))))
            })
            .collect::<CliResult<_>>()?,
        (None, true) => (0..pool.len()).collect(),
        (Some(_), false) => {
            warnings.push("covariates are ignored by unadjusted estimators".into());
            Vec::new()
        }
        (None, false) => Vec::new(),
    };

    let report = estimate(&exp, &z, &y, cfg.estimator, &cols, cfg.correction)?;
    let normal = normal_interval(&report, cfg.level)?;

    let mut clipping = ClippingCounters::default();
    let mut balance = None;
    let improved = match &cfg.design {
        None => {
            warnings.push("no design criterion declared; improved interval omitted".into());
            None
        }
        Some(dc) => {
            let mut rng = stream_rng(seed, 1);
            let crit = BalanceCriterion::from_config(&exp, dc, z.m1(), &mut rng)?;
            let eval = balance_statistic(&exp, &z, &crit)?;
            balance = Some(json!({
                "statistic": eval.statistic,
                "tier_statistics": eval.tier_statistics,
                "threshold": crit.threshold(),
                "accepted": eval.accepted,
            }));
            if !eval.accepted {
                warnings.push("the observed assignment does not satisfy the declared criterion".into());
            }
            let matches = (crit.level() == Level::Cluster) == cfg.estimator.is_cluster_level();
            if crit.has_tiers() {
                warnings.push("improved interval is not available for tiered criteria".into());
                None
            } else if !matches {
                warnings.push(format!(
                    "improved interval needs a {} criterion for this estimator; omitted",
                    if cfg.estimator.is_cluster_level() { "cluster-level" } else { "individual-level" }
                ));
                None
            } else {
                let est = if cfg.estimator.is_cluster_level() {
                    improved_variance_ht(&exp, &z, &y, &cols, crit.design_covariates())?
                } else {
                    improved_variance_haj(&exp, &z, &y, &cols, crit.design_covariates())?
                };
                let shape = LawShape::from_criterion(&crit)?;
                let mut law_rng = stream_rng(seed, 2);
                let ci = improved_interval(&est, exp.m(), &shape, cfg.level, args.mc_size, &mut law_rng)?;
                clipping.v_clipped = est.v_clipped as usize;
                clipping.r2_clipped = est.r2_clipped as usize;
                if est.v_clipped {
                    warnings.push("estimated variance was negative and set to zero".into());
                }
                if est.r2_clipped {
                    warnings.push(format!("estimated R2 {} clipped to [0, 1]", est.r2_raw));
                }
                Some(Improved {
                    interval: interval(ci.lower, ci.upper),
                    v_hat: est.v_hat,
                    r2_hat: est.r2_hat,
                    r2_raw: est.r2_raw,
                    mu_hat: est.mu_hat.clone(),
                    v_clipped: est.v_clipped,
                    r2_clipped: est.r2_clipped,
                    components: est.components,
                })
            }
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let out = Report {
        schema_version: SCHEMA_VERSION,
        estimator: cfg.estimator,
        clusters: exp.m(),
        units: exp.n_units(),
        treated_clusters: z.m1(),
        tau_hat: report.tau_hat,
        se: report.se,
        variance_hat: report.variance_hat,
        correction: cfg.correction,
        level: cfg.level,
        coefficients: report.coefficient_names.iter().cloned().zip(report.coefficients.iter().copied()).collect(),
        normal_interval: interval(normal.lower, normal.upper),
        improved_interval: improved,
        balance,
        imputation,
        warnings,
    };
    write_json(&args.out, &out)?;
    manifest.finish(
        &manifest_path(&args.out),
        &outputs,
        Vec::new(),
        clipping,
        json!({ "mc_size": args.mc_size, "impute": args.impute }),
    )
}
