use std::fs::File;
use std::path::Path;

use clusterre::simharness::{
    factorial_study, read_units_path, run_scenario, run_study, write_factorial_csv, write_metrics_csv,
    SimulationConfig, StudyReport,
};
use serde_json::json;

use crate::manifest::{AcceptanceDiagnostic, ClippingCounters, ManifestBuilder};
use crate::{parse_json, read_text, CliError, CliResult, SimulateArgs};

fn write_designs(report: &StudyReport, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["design", "threshold", "acceptance_rate", "mean_draws", "failures"])?;
    for d in &report.designs {
        w.write_record([
            d.design.clone(),
            d.threshold.to_string(),
            d.acceptance_rate.to_string(),
            d.mean_draws.to_string(),
            d.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn diagnostics(report: &StudyReport) -> (Vec<AcceptanceDiagnostic>, ClippingCounters) {
    let acc = report
        .designs
        .iter()
        .map(|d| AcceptanceDiagnostic {
            design: d.design.clone(),
            threshold: d.threshold,
            acceptance_rate: d.acceptance_rate,
            mean_draws: d.mean_draws,
        })
        .collect();
    let clip = ClippingCounters {
        v_clipped: report.rows.iter().map(|r| r.v_clipped).sum(),
        r2_clipped: report.rows.iter().map(|r| r.r2_clipped).sum(),
    };
    (acc, clip)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let text = read_text(&args.config)?;
    let cfg: SimulationConfig = parse_json(&args.config, &text)?;
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(&args.out)?;
    let manifest_file = args.out.join("manifest.json");
    let mut manifest = ManifestBuilder::new("simulate", &text, 0);

    let (report, details) = match cfg {
        SimulationConfig::Scenario(mut sc) => {
            if let Some(s) = args.seed {
                sc.seed = s;
            }
            if let Some(n) = args.mc_size {
                sc.mc_size = n;
            }
            manifest.seed = sc.seed;
            let (pop, report) = run_scenario(&sc)?;
            let details = json!({
                "study": "scenario",
                "name": sc.name,
                "tau": report.tau,
                "gamma": pop.gamma,
                "covariate_share": pop.covariate_share,
                "noise_var": pop.noise_var,
                "replications": sc.replications,
                "designs": report.designs,
            });
            (report, details)
        }
        SimulationConfig::Data(mut ds) => {
            if let Some(s) = args.seed {
                ds.seed = s;
            }
            if let Some(n) = args.mc_size {
                ds.mc_size = n;
            }
            let path = if ds.data.is_relative() {
                args.config.parent().map(|p| p.join(&ds.data)).unwrap_or(ds.data.clone())
            } else {
                ds.data.clone()
            };
            manifest.seed = ds.seed;
            let data = read_units_path(&path)?;
            let report = run_study(&data.experiment, &ds.settings(data.experiment.m()))?;
            let details = json!({
                "study": "data",
                "data": path.display().to_string(),
                "tau": report.tau,
                "replications": ds.replications,
                "designs": report.designs,
            });
            (report, details)
        }
        SimulationConfig::Factorial(mut grid) => {
            if let Some(s) = args.seed {
                grid.seed = s;
            }
            manifest.seed = grid.seed;
            let rows = factorial_study(&grid)?;
            let out = args.out.join("factorial.csv");
            write_factorial_csv(&rows, File::create(&out)?)?;
            let cells = rows.len();
            manifest.finish(
                &manifest_file,
                &[out],
                Vec::new(),
                ClippingCounters::default(),
                json!({ "study": "factorial", "rows": cells, "replications": grid.replications }),
            )?;
            return Ok(());
        }
        SimulationConfig::Preset { .. } => unreachable!("presets are resolved"),
    };
    let metrics = args.out.join("metrics.csv");
    let designs = args.out.join("designs.csv");
    write_metrics_csv(&report.rows, File::create(&metrics)?)?;
    write_designs(&report, &designs)?;
    let (acc, clip) = diagnostics(&report);
    manifest.finish(&manifest_file, &[metrics, designs], acc, clip, details)?;
    for r in &report.rows {
        eprintln!(
            "{:9} bias {:+.4} sd {:.4} rmse {:.4} cp {:.3}{}",
            r.method,
            r.bias,
            r.sd,
            r.rmse,
            r.cp_normal,
            r.cp_improved.map(|c| format!(" cp_improved {c:.3}")).unwrap_or_default()
        );
    }
    let failed: Vec<&str> = report.rows.iter().filter(|r| r.replications == 0).map(|r| r.method.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("every replication failed for {}", failed.join(", "))));
    }
    Ok(())
}
