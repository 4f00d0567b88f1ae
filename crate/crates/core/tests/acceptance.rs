//! Acceptance checks at their pinned tolerances. Prints one line per criterion
//! and exits nonzero if any fails.

use std::time::Instant;

use clusterre::design::{balance_statistic, draw_complete, rerandomize, Assignment, BalanceCriterion, Level};
use clusterre::estimate::{estimate, fit_ols, sandwich_hw, sandwich_lz, tau_haj, tau_ht, Correction, Estimator};
use clusterre::fpstats::{chisq_quantile, ClusterExperiment};
use clusterre::inference::{sample_l, AsymptoticLaw, ConstrainedGaussian, LawShape};
use clusterre::simharness::{generate_population, run_scenario, stream_rng, Method, ScenarioConfig};
use clusterre::theory::{
    compare_levels, correlated_pair, orthogonal_optimal_expansion, p_k, tier_expansion, truncated_variance,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random clusters of 2..=8 units with `kx` normal covariates and
/// heterogeneous potential outcomes; `c = (n, x~)`.
fn population(rng: &mut ChaCha8Rng, m: usize, kx: usize) -> ClusterExperiment {
    let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(2..=8)).collect();
    let n: usize = sizes.iter().sum();
    let x = DMatrix::from_fn(n, kx, |_, _| normal(rng));
    let beta: Vec<f64> = (0..kx).map(|_| normal(rng)).collect();
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut u = 0;
    for &s in &sizes {
        let shock = normal(rng) + 0.3 * s as f64;
        for _ in 0..s {
            let lin: f64 = (0..kx).map(|j| beta[j] * x[(u, j)]).sum();
            let base = lin + shock + normal(rng);
            y0.push(base);
            y1.push(base + 1.0 + 0.5 * lin + 0.5 * normal(rng));
            u += 1;
        }
    }
    let names: Vec<String> = (1..=kx).map(|j| format!("x{j}")).collect();
    let e = ClusterExperiment::new(sizes, x, DMatrix::zeros(m, 0)).unwrap().with_x_names(names.clone()).unwrap();
    let c = e.size_and_totals().unwrap();
    let mut e = e.with_potential_outcomes(y0, y1).unwrap();
    let mut c_names = vec!["n".to_string()];
    c_names.extend(names);
    e.set_cluster_covariates(c, c_names).unwrap();
    e
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Standard error of a mean from `batches` batch means.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    (var(&means) / batches as f64).sqrt()
}

fn exact_unbiasedness() -> Check {
    let sizes = vec![1, 3, 2, 4];
    let n: usize = sizes.iter().sum();
    let y0: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).sin() * 3.0 + i as f64).collect();
    let y1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).cos() * 5.0 - 0.5 * i as f64).collect();
    let exp = ClusterExperiment::new(sizes, DMatrix::zeros(n, 0), DMatrix::zeros(4, 0))
        .unwrap()
        .with_potential_outcomes(y0, y1)
        .unwrap();
    let tau = exp.tau().unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for a in 0..4 {
        for b in a + 1..4 {
            let z = Assignment::from_treated(4, &[a, b]).unwrap();
            let y = exp.reveal(z.z()).unwrap();
            total += tau_ht(&exp, &z, &y).unwrap();
            count += 1;
        }
    }
    let avg = total / count as f64;
    ensure(count == 6 && (avg - tau).abs() < 1e-12, format!("mean over 6 assignments {avg:.15} vs tau {tau:.15}"))
}

fn chi_square_limit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let exp = population(&mut rng, 200, 2);
    let crit = BalanceCriterion::mahalanobis(&exp, Level::Cluster, &[0, 1, 2], 100).unwrap();
    let mut stats: Vec<f64> = (0..10_000)
        .map(|_| {
            let z = draw_complete(200, 100, &mut rng).unwrap();
            balance_statistic(&exp, &z, &crit).unwrap().statistic
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let chi = ChiSquared::new(3.0).unwrap();
    let n = stats.len() as f64;
    let ks = stats
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = chi.cdf(s);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    ensure(ks < 0.02, format!("KS distance {ks:.4} (limit 0.02)"))
}

fn truncated_variance_expansion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for &k in &[1usize, 2, 7] {
        for &alpha in &[0.01, 0.001] {
            let a = chisq_quantile(alpha, k).unwrap();
            let draws = sample_l(k, a, 1_000_000, &mut rng).unwrap();
            let v = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
            let lead = p_k(k).unwrap() * alpha.powf(2.0 / k as f64);
            let exact = truncated_variance(k, a).unwrap();
            // the sampled variance must also track the closed form
            if (v / exact - 1.0).abs() > 0.02 {
                return Err(format!("K={k} alpha={alpha}: sampled {v:.4e} vs closed form {exact:.4e}"));
            }
            let rel = (v / lead - 1.0).abs();
            worst = worst.max(rel);
            parts.push(format!("K={k},a={alpha}:{:.1}%", 100.0 * rel));
        }
    }
    ensure(worst < 0.15, format!("max relative gap {:.1}% [{}]", 100.0 * worst, parts.join(" ")))
}

fn p_k_values() -> Check {
    let p1 = p_k(1).unwrap();
    let p2 = p_k(2).unwrap();
    let values: Vec<f64> = (1..=50).map(|k| p_k(k).unwrap()).collect();
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let ok = (p1 - std::f64::consts::PI / 6.0).abs() < 1e-12 && (p2 - 0.5).abs() < 1e-12 && decreasing;
    ensure(
        ok,
        format!(
            "p1-pi/6 {:.1e}, p2-1/2 {:.1e}, strictly decreasing to K=50: {decreasing}",
            p1 - std::f64::consts::PI / 6.0,
            p2 - 0.5
        ),
    )
}

fn tier_dominance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=10usize);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let scale = rng.random_range(0.05..1.0) / raw.iter().sum::<f64>();
        let r2: Vec<f64> = raw.iter().map(|r| r * scale).collect();
        // random cut points split covariates into consecutive tiers
        let mut dims = Vec::new();
        let mut left = k;
        while left > 0 {
            let d = rng.random_range(1..=left);
            dims.push(d);
            left -= d;
        }
        let alpha = 10f64.powf(rng.random_range(-4.0..-0.5));
        let shares: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = shares.iter().sum();
        let rates: Vec<f64> = shares.iter().map(|s| alpha.powf(s / total)).collect();
        let mut lhs = 0.0;
        let mut start = 0;
        let mut r_tiers = Vec::new();
        for (&d, &al) in dims.iter().zip(&rates) {
            let r_tier: f64 = r2[start..start + d].iter().sum();
            lhs += r_tier * p_k(d).unwrap() * al.powf(2.0 / d as f64);
            r_tiers.push(r_tier);
            start += d;
        }
        let geo = (r2.iter().map(|r| r.ln()).sum::<f64>() / k as f64).exp();
        let rhs = k as f64 * geo * p_k(k).unwrap() * alpha.powf(2.0 / k as f64);
        let lib_lhs = tier_expansion(&r_tiers, &dims, &rates).unwrap();
        let lib_rhs = orthogonal_optimal_expansion(&r2, alpha).unwrap();
        if (lib_lhs / lhs - 1.0).abs() > 1e-12 || (lib_rhs / rhs - 1.0).abs() > 1e-12 {
            return Err(format!(
                "library expansions disagree with the direct sums: {lib_lhs} vs {lhs}, {lib_rhs} vs {rhs}"
            ));
        }
        let gap = lhs - rhs;
        min_gap = min_gap.min(gap / rhs);
        if gap < -1e-12 {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} violations in 10000 configurations; min relative gap {min_gap:.3e}"))
}

fn level_comparison() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fails = 0;
    for _ in 0..100 {
        let m = rng.random_range(20..=80);
        let kx = rng.random_range(1..=4);
        let exp = population(&mut rng, m, kx);
        if !compare_levels(&exp, m / 2).unwrap().holds {
            fails += 1;
        }
    }
    ensure(fails == 0, format!("residual-variance inequality failed {fails} of 100 times"))
}

fn correlated_pair_ratio() -> Check {
    let mut msgs = Vec::new();
    let mut ok = true;
    for &d in &[-1.0, 0.0, 1.0] {
        let cp = correlated_pair(d).unwrap();
        let target = ((4.0 - d) / (4.0 + d)).sqrt();
        ok &= (cp.ratio - target).abs() < 1e-10;
        msgs.push(format!("d={d}: {:.12}", cp.ratio));
    }
    // positive correlation favours the optimal weights
    let (neg, zero, pos) =
        (correlated_pair(-1.0).unwrap(), correlated_pair(0.0).unwrap(), correlated_pair(1.0).unwrap());
    ok &= pos.ratio < 1.0 && (zero.ratio - 1.0).abs() < 1e-12 && neg.ratio > 1.0;
    ensure(ok, msgs.join(", "))
}

fn scenario_one() -> Check {
    let mut cfg = ScenarioConfig::preset(1).unwrap();
    cfg.replications = 500;
    let (_, report) = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let row = |m: Method| report.row(m).unwrap();
    let mut problems = Vec::new();
    for r in &report.rows {
        if r.bias.abs() >= 0.05 {
            problems.push(format!("{} bias {:.3}", r.method, r.bias));
        }
        if r.cp_normal < 0.94 {
            problems.push(format!("{} cp {:.3}", r.method, r.cp_normal));
        }
    }
    let ratio = row(Method::ReMC).sd / row(Method::Haj).sd;
    if !(0.3..=0.7).contains(&ratio) {
        problems.push(format!("sd ratio {ratio:.3}"));
    }
    for m in [Method::ReMC, Method::ReWC, Method::ReMX, Method::ReWX] {
        let r = row(m);
        match (r.len_improved, r.cp_improved) {
            (Some(len), Some(cp)) if len < r.len_normal && cp >= 0.92 => {}
            other => problems.push(format!("{m} improved {other:?} vs normal length {:.3}", r.len_normal)),
        }
    }
    let max_bias = report.rows.iter().map(|r| r.bias.abs()).fold(0.0, f64::max);
    let min_cp = report.rows.iter().map(|r| r.cp_normal).fold(1.0, f64::min);
    let summary = format!(
        "max|bias| {max_bias:.3}, sd ratio {ratio:.3}, min cp {min_cp:.3}, ReMC length {:.2} vs {:.2}",
        row(Method::ReMC).len_improved.unwrap_or(f64::NAN),
        row(Method::ReMC).len_normal
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", problems.join("; ")))
    }
}

fn sandwich_conservative() -> Check {
    let cfg = ScenarioConfig::preset(1).unwrap();
    let pop = generate_population(&cfg, &mut stream_rng(9, u64::MAX)).unwrap();
    let exp = pop.experiment;
    let cols: Vec<usize> = (0..exp.c().ncols()).collect();
    let mut crit = BalanceCriterion::mahalanobis(&exp, Level::Cluster, &cols, cfg.m1).unwrap();
    crit.calibrate(0.01, &mut stream_rng(9, 1)).unwrap();
    let tau = exp.tau().unwrap();
    let m = exp.m() as f64;
    let reps = 2000;
    let mut dev = Vec::with_capacity(reps);
    let mut vhat = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = stream_rng(9, r as u64);
        let z = rerandomize(&crit, 1_000_000, &mut rng).unwrap().assignment;
        let y = exp.reveal(z.z()).unwrap();
        let est = estimate(&exp, &z, &y, Estimator::HtAdj, &cols, Correction::None).unwrap();
        dev.push(m.sqrt() * (est.tau_hat - tau));
        vhat.push(m * est.variance_hat);
    }
    let mc_var = dev.iter().map(|d| d * d).sum::<f64>() / reps as f64;
    let sq: Vec<f64> = dev.iter().map(|d| d * d).collect();
    let mc_se = (var(&sq) / reps as f64).sqrt();
    let avg = mean(&vhat);
    ensure(
        avg >= mc_var - 2.0 * mc_se,
        format!("mean M*V_HW {avg:.3} vs MC variance {mc_var:.3} (2 SE = {:.3})", 2.0 * mc_se),
    )
}

fn gibbs_vs_rejection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let weights = [1.0, 4.0];
    let q = |e: &[f64; 2]| weights[0] * e[0] * e[0] + weights[1] * e[1] * e[1];
    let mut probe: Vec<f64> = (0..1_000_000).map(|_| q(&[normal(&mut rng), normal(&mut rng)])).collect();
    probe.sort_by(f64::total_cmp);
    let a = probe[probe.len() / 20];
    let n = 100_000;
    let mut rejection = Vec::with_capacity(n);
    while rejection.len() < n {
        let e = [normal(&mut rng), normal(&mut rng)];
        if q(&e) <= a {
            rejection.push(e);
        }
    }
    let a_mat = DMatrix::from_diagonal(&DVector::from_vec(weights.to_vec()));
    let gibbs = ConstrainedGaussian::new(&a_mat, a).unwrap().force_gibbs().sample(n, &mut rng);
    let stats: [(&str, fn(f64, f64) -> f64); 5] =
        [("E1", |x, _| x), ("E2", |_, y| y), ("E11", |x, _| x * x), ("E22", |_, y| y * y), ("E12", |x, y| x * y)];
    let mut worst: f64 = 0.0;
    for (_, f) in stats {
        let g: Vec<f64> = (0..n).map(|i| f(gibbs[(i, 0)], gibbs[(i, 1)])).collect();
        let r: Vec<f64> = rejection.iter().map(|e| f(e[0], e[1])).collect();
        let se = (batch_se(&g, 100).powi(2) + var(&r) / n as f64).sqrt();
        worst = worst.max((mean(&g) - mean(&r)).abs() / se);
    }
    ensure(worst < 4.0, format!("largest moment gap {worst:.2} MC SEs (a = {a:.4})"))
}

fn property_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut notes = Vec::new();

    // symmetric, unimodal law
    let shape = LawShape::ellipsoid(DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 3.0]), 0.5);
    let law = AsymptoticLaw::new(1.0, 0.8, DVector::from_vec(vec![0.6, 0.8]), shape).unwrap();
    let draws = law.sample(400_000, &mut rng).unwrap();
    let sd = var(&draws).sqrt();
    let mean_z = mean(&draws) / (sd / (draws.len() as f64).sqrt());
    let above = draws.iter().filter(|&&x| x > 0.0).count() as f64 / draws.len() as f64;
    let width = sd / 4.0;
    let mut bins = [0usize; 16];
    for &x in &draws {
        let b = (x.abs() / width) as usize;
        if b < bins.len() {
            bins[b] += 1;
        }
    }
    let unimodal = bins.windows(2).all(|w| w[1] as f64 <= w[0] as f64 + 4.0 * (w[0] as f64).sqrt());
    if mean_z.abs() > 4.0 || (above - 0.5).abs() > 0.005 || !unimodal {
        return Err(format!("law: mean z {mean_z:.2}, P(>0) {above:.4}, unimodal {unimodal}"));
    }
    notes.push("law symmetric/unimodal");

    // equal cluster sizes: Hajek equals HT
    let exp = ClusterExperiment::new(vec![3; 12], DMatrix::zeros(36, 0), DMatrix::zeros(12, 0)).unwrap();
    let mut gap: f64 = 0.0;
    for _ in 0..50 {
        let z = draw_complete(12, 5, &mut rng).unwrap();
        let y: Vec<f64> = (0..36).map(|_| normal(&mut rng) * 4.0 + 2.0).collect();
        gap = gap.max((tau_haj(&exp, &z, &y).unwrap() - tau_ht(&exp, &z, &y).unwrap()).abs());
    }
    if gap > 1e-12 {
        return Err(format!("Hajek vs HT with equal sizes differ by {gap:.2e}"));
    }
    notes.push("haj=ht");

    // singleton clusters: LZ equals HW
    let n = 40;
    let design = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { normal(&mut rng) + (i % 3) as f64 });
    let y: Vec<f64> = (0..n).map(|i| design[(i, 1)] * 2.0 + normal(&mut rng) * (1.0 + design[(i, 2)].abs())).collect();
    let fit = fit_ols(design, &y, vec!["1".into(), "a".into(), "b".into()]).unwrap();
    let groups: Vec<usize> = (0..n).collect();
    for c in [Correction::None, Correction::Df] {
        let d = (sandwich_lz(&fit, &groups, c).unwrap() - sandwich_hw(&fit, c)).amax();
        if d > 1e-12 {
            return Err(format!("LZ vs HW on singletons differ by {d:.2e}"));
        }
    }
    notes.push("lz=hw");

    // affine invariance of Mahalanobis accept/reject
    let base = population(&mut rng, 40, 3);
    let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.0, 1.5, 0.3, 0.7, 0.0, -0.8]);
    let shifted = base.x() * &b + DMatrix::from_fn(base.n_units(), 3, |_, j| 3.0 * j as f64 - 1.0);
    let moved = ClusterExperiment::new(base.sizes().to_vec(), shifted, DMatrix::zeros(40, 0)).unwrap();
    let mut c1 = BalanceCriterion::mahalanobis(&base, Level::Individual, &[0, 1, 2], 20).unwrap();
    let mut c2 = BalanceCriterion::mahalanobis(&moved, Level::Individual, &[0, 1, 2], 20).unwrap();
    c1.calibrate(0.3, &mut rng).unwrap();
    c2.calibrate(0.3, &mut rng).unwrap();
    for _ in 0..500 {
        let z = draw_complete(40, 20, &mut rng).unwrap();
        let (e1, e2) = (balance_statistic(&base, &z, &c1).unwrap(), balance_statistic(&moved, &z, &c2).unwrap());
        if e1.accepted != e2.accepted || (e1.statistic - e2.statistic).abs() > 1e-9 * (1.0 + e1.statistic) {
            return Err(format!("affine map changed the statistic: {} vs {}", e1.statistic, e2.statistic));
        }
    }
    notes.push("affine invariance");

    // RMSE decomposition
    let mut cfg = ScenarioConfig::preset(2).unwrap();
    cfg.replications = 40;
    cfg.methods = vec![Method::Haj, Method::Ht, Method::ReMC, Method::ReMX, Method::ReMXAdj];
    let (_, report) = run_scenario(&cfg).map_err(|e| e.to_string())?;
    for r in &report.rows {
        let gap = (r.rmse * r.rmse - r.bias * r.bias - r.sd * r.sd).abs();
        if gap > 1e-10 * (1.0 + r.rmse * r.rmse) {
            return Err(format!("{}: rmse^2 - bias^2 - sd^2 = {gap:.2e}", r.method));
        }
    }
    notes.push("rmse^2=bias^2+sd^2");
    Ok(notes.join(", "))
}

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("exact unbiasedness by enumeration", exact_unbiasedness),
        ("chi-square limit of the Mahalanobis statistic", chi_square_limit),
        ("truncated variance expansion", truncated_variance_expansion),
        ("p_K values and monotonicity", p_k_values),
        ("tier dominance", tier_dominance),
        ("Hajek on x vs HT on (n, x~)", level_comparison),
        ("correlated pair ratio", correlated_pair_ratio),
        ("desk-scale scenario 1", scenario_one),
        ("conservative HW sandwich under rerandomization", sandwich_conservative),
        ("Gibbs vs rejection sampling", gibbs_vs_rejection),
        ("property suite", property_suite),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {:2} PASS  {name} ({secs:.1}s): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name} ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
