//! Standard normal distribution and tail probabilities.
//!
//! Upper tails `P(N(0,1) > k)` are needed far past the point where they
//! underflow an `f64`, so the primary quantity here is the natural log of the
//! tail. Below `ASYMPTOTIC_THRESHOLD` it comes from `erfc`; beyond it from the
//! Mills-ratio continued fraction, which is accurate to machine precision
//! there and never underflows.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Beyond this many standard deviations the log tail is computed analytically.
pub const ASYMPTOTIC_THRESHOLD: f64 = 8.0;

/// `P(N(0,1) <= z)`.
pub fn cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `P(N(0,1) > k)`. Underflows to zero for `k` beyond roughly 38.
pub fn upper_tail(k: f64) -> f64 {
    if k.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(k * FRAC_1_SQRT_2)
}

/// `ln P(N(0,1) > k)`, finite for every finite `k`.
pub fn log_upper_tail(k: f64) -> f64 {
    if k.is_nan() {
        return f64::NAN;
    }
    if k == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if k == f64::NEG_INFINITY {
        return 0.0;
    }
    if k < 0.0 {
        // tail close to 1: ln(1 - P(N > -k))
        (-upper_tail(-k)).ln_1p()
    } else if k < ASYMPTOTIC_THRESHOLD {
        upper_tail(k).ln()
    } else {
        -0.5 * k * k - 0.5 * (2.0 * PI).ln() + mills_ratio(k).ln()
    }
}

/// `ln P(N(0,1) <= z)`.
pub fn log_cdf(z: f64) -> f64 {
    log_upper_tail(-z)
}

/// Mills ratio `P(N > k) / phi(k)` by Lentz's method on
/// `1 / (k + 1 / (k + 2 / (k + 3 / (k + ...))))`. Valid for `k` well above 1.
fn mills_ratio(k: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = k;
    let mut c = k;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64;
        d = k + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = k + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Probability mass of `N(mean, sd^2)` at or below `x`. A zero `sd` is a point
/// mass at `mean`.
pub fn normal_cdf_at(x: f64, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if mean <= x { 1.0 } else { 0.0 };
    }
    cdf((x - mean) / sd)
}
