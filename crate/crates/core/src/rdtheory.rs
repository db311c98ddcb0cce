//! Closed-form rate–distortion for Gaussian mixtures under a shared
//! reverse water-filling level θ.
//!
//! Rates are in bits per vector, distortions are source-domain squared error
//! per vector. Whitened-domain targets are returned by [`target_distortions`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gmm::GmmModel;

/// Mixture weights and per-component eigenvalue spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpectrum {
    pub weights: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
}

impl MixtureSpectrum {
    pub fn new(weights: Vec<f64>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != lambdas.len() {
            return invalid("spectrum needs one eigenvalue list per weight");
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return invalid("weights must be positive");
        }
        if lambdas.iter().flatten().any(|l| !(*l > 0.0 && l.is_finite())) {
            return invalid("eigenvalues must be positive and finite");
        }
        Ok(Self { weights, lambdas })
    }

    pub fn from_model(model: &GmmModel) -> Self {
        Self {
            weights: model.weights(),
            lambdas: model.components().iter().map(|c| c.eigenvalues().to_vec()).collect(),
        }
    }

    /// Σ_c π_c Σ_n λ_{c,n}
    pub fn total_variance(&self) -> f64 {
        self.weights.iter().zip(&self.lambdas).map(|(w, l)| w * l.iter().sum::<f64>()).sum()
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambdas.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambdas.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Σ_c π_c · N_c
    fn weighted_dims(&self) -> f64 {
        self.weights.iter().zip(&self.lambdas).map(|(w, l)| w * l.len() as f64).sum()
    }

    /// `D(θ) = Σ_c π_c Σ_n min{λ_{c,n}, θ}`
    pub fn distortion(&self, theta: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.lambdas)
            .map(|(w, l)| w * l.iter().map(|&x| x.min(theta)).sum::<f64>())
            .sum()
    }

    /// `½ Σ_c π_c Σ_n log2(λ_{c,n} / min{λ_{c,n}, θ})`
    pub fn rate(&self, theta: f64) -> f64 {
        self.weights.iter().zip(&self.lambdas).map(|(w, l)| w * component_rate(l, theta)).sum()
    }
}

fn component_rate(lambdas: &[f64], theta: f64) -> f64 {
    0.5 * lambdas.iter().filter(|&&l| l > theta).map(|&l| (l / theta).log2()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub theta: f64,
    pub rate_bits: f64,
    pub distortion: f64,
}

/// Reverse water-filling on a single Gaussian: `(rate_bits, distortion)`.
pub fn gaussian_rd(lambdas: &[f64], theta: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return invalid("gaussian_rd needs positive eigenvalues and θ");
    }
    let d = lambdas.iter().map(|&l| l.min(theta)).sum();
    Ok((component_rate(lambdas, theta), d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    pub theta: f64,
    /// The requested distortion exceeded the total variance; θ was pinned at
    /// the zero-rate point `λ_max`.
    pub clamped: bool,
}

const BISECTION_MAX_ITER: usize = 200;
const BISECTION_REL_TOL: f64 = 1e-12;

/// Water level θ with `D(θ) = d_target`.
pub fn solve_theta(spec: &MixtureSpectrum, d_target: f64) -> Result<ThetaSolution> {
    if !(d_target > 0.0 && d_target.is_finite()) {
        return invalid(format!("target distortion must be positive, got {d_target}"));
    }
    let total = spec.total_variance();
    let lmax = spec.max_lambda();
    if d_target >= total {
        return Ok(ThetaSolution { theta: lmax, clamped: d_target > total });
    }
    let mut lo = spec.min_lambda() * 1e-6;
    let mut hi = lmax;
    if spec.distortion(lo) >= d_target {
        // Below the smallest eigenvalue every dimension is active: D(θ) = θ·Σπ_c N_c.
        return Ok(ThetaSolution { theta: d_target / spec.weighted_dims(), clamped: false });
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..BISECTION_MAX_ITER {
        theta = 0.5 * (lo + hi);
        let d = spec.distortion(theta);
        if (d - d_target).abs() <= BISECTION_REL_TOL * d_target {
            break;
        }
        if d < d_target {
            lo = theta;
        } else {
            hi = theta;
        }
    }
    // D is affine between eigenvalue breakpoints; solve the segment exactly.
    let mut inactive = 0.0;
    let mut active_w = 0.0;
    for (w, l) in spec.weights.iter().zip(&spec.lambdas) {
        for &x in l {
            if x > theta {
                active_w += w;
            } else {
                inactive += w * x;
            }
        }
    }
    if active_w > 0.0 {
        let exact = (d_target - inactive) / active_w;
        if exact > 0.0
            && (spec.distortion(exact) - d_target).abs() <= (spec.distortion(theta) - d_target).abs()
        {
            theta = exact;
        }
    }
    Ok(ThetaSolution { theta, clamped: false })
}

/// `R_{X|C}` and `D` at a common water level.
pub fn conditional_rd(spec: &MixtureSpectrum, theta: f64) -> RdPoint {
    RdPoint { theta, rate_bits: spec.rate(theta), distortion: spec.distortion(theta) }
}

/// `H(C) = −Σ π_c log2 π_c` in bits.
pub fn mode_entropy_bits(weights: &[f64]) -> f64 {
    -weights.iter().filter(|&&w| w > 0.0).map(|&w| w * w.log2()).sum::<f64>()
}

/// Conditional rate plus the cost of sending the mode index losslessly.
pub fn genie_bound(spec: &MixtureSpectrum, theta: f64) -> RdPoint {
    let p = conditional_rd(spec, theta);
    RdPoint { rate_bits: p.rate_bits + mode_entropy_bits(&spec.weights), ..p }
}

/// Whitened-domain targets `d_{c,n} = min{1, θ/λ_{c,n}}`.
pub fn target_distortions(spec: &MixtureSpectrum, theta: f64) -> Vec<Vec<f64>> {
    spec.lambdas.iter().map(|l| l.iter().map(|&x| (theta / x).min(1.0)).collect()).collect()
}

/// `count` log-spaced water levels (ascending) from the point where the
/// conditional rate reaches `max_bits_per_dim` up to the zero-rate level.
pub fn theta_grid(spec: &MixtureSpectrum, count: usize, max_bits_per_dim: f64) -> Vec<f64> {
    let hi = spec.max_lambda();
    let dims = spec.lambdas.iter().map(Vec::len).max().unwrap_or(1) as f64;
    let target = max_bits_per_dim * dims;
    let (mut a, mut b) = (hi.ln(), hi.ln());
    while spec.rate(a.exp()) < target {
        a -= 1.0;
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if spec.rate(m.exp()) >= target {
            a = m;
        } else {
            b = m;
        }
    }
    let lo = a;
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|i| (lo + (hi.ln() - lo) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}
