//! Run one preset scenario and print its diagnostics:
//! `cargo run --release --example scenario -- <preset> <replications> [seed]`.

use clusterre::simharness::{run_scenario, ScenarioConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let id: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut cfg = ScenarioConfig::preset(id).expect("preset");
    cfg.replications = reps;
    if let Some(s) = args.next().and_then(|s| s.parse().ok()) {
        cfg.seed = s;
    }
    let t = std::time::Instant::now();
    let (pop, report) = run_scenario(&cfg).expect("study");
    println!("gamma {:?} share {:.3} tau {:.4} ({:.1?})", pop.gamma, pop.covariate_share, report.tau, t.elapsed());
    for d in &report.designs {
        println!(
            "{:6} a={:.3} rate={:.5} draws={:.0} fail={}",
            d.design, d.threshold, d.acceptance_rate, d.mean_draws, d.failures
        );
    }
    for r in &report.rows {
        println!(
            "{:9} bias={:+.3} sd={:.3} rmse={:.3} cp={:.3} len={:.3} cpi={:?} leni={:?} fail={} ifail={} vclip={} r2clip={}",
            r.method, r.bias, r.sd, r.rmse, r.cp_normal, r.len_normal, r.cp_improved.map(|v| (v * 1000.0).round() / 1000.0),
            r.len_improved.map(|v| (v * 1000.0).round() / 1000.0), r.failures, r.improved_failures, r.v_clipped, r.r2_clipped
        );
    }
}
