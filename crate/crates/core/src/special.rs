//! Special functions shared by the distribution kernel.
//!
//! `erf`/`erfc` come from `libm` (msun port, ~1 ulp); `ln_gamma`, `digamma` and
//! the regularized incomplete gamma come from `statrs`. Trigamma and the log
//! normal tail are local.

use std::f64::consts::PI;

pub use libm::{erf, erfc};
pub use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

/// ½·ln(2π)
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln Φ(z)`, accurate far into the lower tail where `Φ` underflows.
pub fn ln_std_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        std_normal_cdf(z).ln()
    } else {
        // Mills-ratio asymptotic expansion
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - HALF_LN_2PI + series.ln()
    }
}

/// Trigamma ψ'(x) for x > 0: recurrence up to x ≥ 10, then the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

/// 2π, named for readability in log-density formulas.
pub const TWO_PI: f64 = 2.0 * PI;
