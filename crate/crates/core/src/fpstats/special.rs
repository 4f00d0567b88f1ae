//! Special functions: log-gamma, regularized incomplete gamma, and the
//! chi-square and standard normal distribution functions built on them.
//!
//! The lower regularized gamma `P(s, x)` uses the power series when
//! `x < s + 1` and the Lentz continued fraction for `Q(s, x)` otherwise.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

fn gamma_series(s: f64, x: f64) -> f64 {
    let mut term = 1.0 / s;
    let mut sum = term;
    let mut denom = s;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + s * x.ln() - ln_gamma(s)).exp()
}

fn gamma_continued_fraction(s: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + s * x.ln() - ln_gamma(s)).exp() * h
}

/// Regularized lower incomplete gamma `P(s, x)`.
pub fn gamma_p(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < s + 1.0 {
        gamma_series(s, x)
    } else {
        1.0 - gamma_continued_fraction(s, x)
    }
}

/// Regularized upper incomplete gamma `Q(s, x) = 1 - P(s, x)`.
pub fn gamma_q(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < s + 1.0 {
        1.0 - gamma_series(s, x)
    } else {
        gamma_continued_fraction(s, x)
    }
}

/// CDF of the chi-square distribution with `k` degrees of freedom.
pub fn chisq_cdf(a: f64, k: usize) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    gamma_p(k as f64 / 2.0, a / 2.0)
}

/// Upper tail of the chi-square distribution.
pub fn chisq_sf(a: f64, k: usize) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    gamma_q(k as f64 / 2.0, a / 2.0)
}

fn chisq_ln_pdf(x: f64, k: usize) -> f64 {
    let h = k as f64 / 2.0;
    (h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)
}

/// Quantile of the chi-square distribution: the `a` with `chisq_cdf(a, k) = p`.
///
/// Safeguarded Newton iteration inside a bisection bracket; the residual is
/// measured in whichever tail is smaller so both extremes keep relative
/// precision.
pub fn chisq_quantile(p: f64, k: usize) -> Result<f64> {
    check_quantile_args(p, k)?;
    if p <= 0.5 {
        Ok(quantile_core(p, true, k))
    } else {
        Ok(quantile_core(1.0 - p, false, k))
    }
}

/// The `a` with upper tail `chisq_sf(a, k) = q`; precise when `q` is tiny.
pub fn chisq_quantile_upper(q: f64, k: usize) -> Result<f64> {
    check_quantile_args(q, k)?;
    if q <= 0.5 {
        Ok(quantile_core(q, false, k))
    } else {
        Ok(quantile_core(1.0 - q, true, k))
    }
}

fn check_quantile_args(p: f64, k: usize) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("chi-square quantile needs 0 < p < 1, got {p}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("chi-square needs k >= 1".into()));
    }
    Ok(())
}

fn quantile_core(target: f64, lower_tail: bool, k: usize) -> f64 {
    let kf = k as f64;
    let p = if lower_tail { target } else { 1.0 - target };
    // residual is increasing in x in both branches
    let resid = |x: f64| {
        if lower_tail {
            chisq_cdf(x, k) - target
        } else {
            target - chisq_sf(x, k)
        }
    };

    // starting point: small-x expansion in the lower tail, Wilson-Hilferty otherwise
    let h = kf / 2.0;
    let mut x = if lower_tail && p < 0.05 {
        2.0 * ((p.ln() + ln_gamma(h + 1.0)) / h).exp()
    } else {
        let z = normal_quantile(p);
        let v = 2.0 / (9.0 * kf);
        (kf * (1.0 - v + z * v.sqrt()).powi(3)).max(1e-3)
    };

    let mut lo = 0.0;
    let mut hi = kf.max(1.0);
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let f = resid(x);
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chisq_ln_pdf(x, k).exp();
        let mut next = x - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * x.abs() || (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    x
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Phi(x) - 1/2`, accurate near zero.
pub fn normal_cdf_minus_half(x: f64) -> f64 {
    let half = 0.5 * gamma_p(0.5, 0.5 * x * x);
    if x < 0.0 {
        -half
    } else {
        half
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    let tail = 0.5 * gamma_q(0.5, 0.5 * x * x);
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
const P_LOW: f64 = 0.02425;

fn lower_tail_guess(p: f64) -> f64 {
    let q = (-2.0 * p.ln()).sqrt();
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

fn central_guess(q: f64) -> f64 {
    let r = q * q;
    (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
        / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
}

/// Standard normal quantile for `0 < p < 1`: rational approximation followed
/// by one Halley refinement step.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    if p < P_LOW {
        let x = lower_tail_guess(p);
        let e = normal_cdf(x) - p;
        halley(x, e)
    } else {
        normal_quantile_centered(p - 0.5)
    }
}

/// Quantile at `p = 1/2 + q` taking the offset `q` directly, which keeps
/// full relative precision for tiny `|q|`.
pub fn normal_quantile_centered(q: f64) -> f64 {
    if q.abs() >= 0.5 {
        return if q > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    if q.abs() > 0.5 - P_LOW {
        let x = normal_quantile(0.5 - q.abs());
        return if q > 0.0 { -x } else { x };
    }
    let x = central_guess(q);
    let e = normal_cdf_minus_half(x) - q;
    halley(x, e)
}

fn halley(x: f64, e: f64) -> f64 {
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
