//! Standard normal density, distribution and truncated moments.
//!
//! Everything goes through the pure-Rust `libm` so results do not depend on
//! the platform's math library.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `φ(x)`; zero at ±∞.
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    libm::exp(-0.5 * x * x) / (2.0 * PI).sqrt()
}

/// `Φ(x)`
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, with `None` standing for −∞ / +∞. Picks the
/// formulation that avoids cancellation in the tails.
pub fn mass(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (None, None) => 1.0,
        (None, Some(b)) => cdf(b),
        (Some(a), None) => 0.5 * libm::erfc(a * FRAC_1_SQRT_2),
        (Some(a), Some(b)) => {
            if b <= 0.0 {
                0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
            } else if a >= 0.0 {
                0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
            } else {
                0.5 * (libm::erf(b * FRAC_1_SQRT_2) - libm::erf(a * FRAC_1_SQRT_2))
            }
        }
    }
}

fn pdf_opt(x: Option<f64>) -> f64 {
    x.map_or(0.0, pdf)
}

fn x_pdf_opt(x: Option<f64>) -> f64 {
    x.map_or(0.0, |v| v * pdf(v))
}

/// Zeroth, first and second moments of `Z ~ N(0,1)` restricted to `(a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMoments {
    pub mass: f64,
    pub first: f64,
    pub second: f64,
}

pub fn interval_moments(a: Option<f64>, b: Option<f64>) -> IntervalMoments {
    let m0 = mass(a, b);
    IntervalMoments {
        mass: m0,
        first: pdf_opt(a) - pdf_opt(b),
        second: m0 + x_pdf_opt(a) - x_pdf_opt(b),
    }
}

/// `E[Z | a < Z ≤ b]`
pub fn conditional_mean(a: Option<f64>, b: Option<f64>) -> f64 {
    let m = interval_moments(a, b);
    m.first / m.mass
}

/// `Φ⁻¹(p)` for `p ∈ (0, 1)`: Acklam's rational approximation polished with
/// two Halley steps.
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let mut x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = cdf(x) - p;
        let u = e * (2.0 * PI).sqrt() * libm::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}
