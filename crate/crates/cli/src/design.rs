use clusterre::design::{rerandomize, BalanceCriterion, DesignSpec};
use clusterre::simharness::{read_units_path, stream_rng};
use serde_json::json;

use crate::manifest::{manifest_path, AcceptanceDiagnostic, ClippingCounters, ManifestBuilder};
use crate::{parse_json, read_text, CliResult, DesignArgs};

pub fn run(args: &DesignArgs) -> CliResult<()> {
    let text = read_text(&args.config)?;
    let spec: DesignSpec = parse_json(&args.config, &text)?;
    let seed = args.seed.unwrap_or(spec.seed);
    let manifest = ManifestBuilder::new("design", &text, seed);

    let data = read_units_path(&args.data)?;
    let exp = &data.experiment;
    let mut cal_rng = stream_rng(seed, 1);
    let crit = BalanceCriterion::from_config(exp, &spec.criterion, spec.treated, &mut cal_rng)?;
    let mut rng = stream_rng(seed, 0);
    let drawn = rerandomize(&crit, spec.max_draws, &mut rng)?;

    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["cluster_id", "z"])?;
    for (id, z) in exp.cluster_ids().iter().zip(drawn.assignment.z()) {
        w.write_record([id.as_str(), if *z == 1 { "1" } else { "0" }])?;
    }
    w.flush()?;

    let threshold = if crit.has_tiers() { f64::NAN } else { crit.threshold() };
    let details = json!({
        "clusters": exp.m(),
        "treated": spec.treated,
        "criterion": crit.kind(),
        "level": crit.level(),
        "columns": crit.names(),
        "statistic": drawn.evaluation.statistic,
        "tier_statistics": drawn.evaluation.tier_statistics,
        "threshold": crit.threshold(),
        "tier_thresholds": crit.tier_thresholds(),
        "draws": drawn.draws,
    });
    let acceptance = vec![AcceptanceDiagnostic {
        design: format!("{:?}", crit.kind()),
        threshold,
        acceptance_rate: 1.0 / drawn.draws as f64,
        mean_draws: drawn.draws as f64,
    }];
    manifest.finish(
        &manifest_path(&args.out),
        std::slice::from_ref(&args.out),
        acceptance,
        ClippingCounters::default(),
        details,
    )?;
    eprintln!("accepted after {} draw(s); statistic {:.6}", drawn.draws, drawn.evaluation.statistic);
    Ok(())
}
