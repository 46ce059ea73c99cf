//! Standard normal density, distribution function and the ratios EP and EI need.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Below this point Φ is evaluated through its asymptotic series.
const TAIL: f64 = -30.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `1 - 1/x² + 3/x⁴ - ...`, so that Φ(x) ≈ φ(x)/(-x) · series for x ≪ 0.
fn mills_series(x: f64) -> f64 {
    let t = 1.0 / (x * x);
    1.0 - t * (1.0 - 3.0 * t * (1.0 - 5.0 * t * (1.0 - 7.0 * t)))
}

pub fn log_norm_cdf(x: f64) -> f64 {
    if x >= TAIL {
        if x > 5.0 {
            (-norm_cdf(-x)).ln_1p()
        } else {
            norm_cdf(x).ln()
        }
    } else {
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + mills_series(x).ln()
    }
}

/// φ(x)/Φ(x), stable for very negative x.
pub fn inverse_mills(x: f64) -> f64 {
    if x >= TAIL {
        norm_pdf(x) / norm_cdf(x)
    } else {
        -x / mills_series(x)
    }
}
