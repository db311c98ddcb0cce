//! Lloyd–Max scalar quantizers for a standard Gaussian, the admissible
//! level-count ladder, and per-(component, coefficient) level selection.
//!
//! Indices are 0-based: interval `j` is `(b_j, b_{j+1}]` with `b_0 = −∞` and
//! `b_L = +∞`. A value sitting exactly on a threshold goes to the left
//! interval.

use crate::entropycoder::SymbolModel;
use crate::error::{invalid, AtcError, Result};
use crate::normal::{self, interval_moments};
use crate::rdtheory::{target_distortions, MixtureSpectrum};

pub const DEFAULT_LADDER: [usize; 22] = [
    1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024,
];

pub const DEFAULT_DESIGN_TOL: f64 = 1e-10;
const MAX_DESIGN_ITER: usize = 10_000;

/// Decision boundary; infinite ends are explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Bound {
    fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydMaxQuantizer {
    centroids: Vec<f64>,
    /// The `L − 1` finite decision thresholds.
    thresholds: Vec<f64>,
    mse: f64,
}

impl LloydMaxQuantizer {
    /// Reassembles a stored quantizer, checking ordering and shape.
    pub fn from_parts(centroids: Vec<f64>, thresholds: Vec<f64>, mse: f64) -> Result<Self> {
        if centroids.is_empty() || thresholds.len() + 1 != centroids.len() {
            return invalid("quantizer needs L centroids and L-1 thresholds");
        }
        let ordered = centroids.windows(2).all(|w| w[0] < w[1])
            && thresholds.windows(2).all(|w| w[0] < w[1])
            && centroids.iter().zip(&thresholds).all(|(q, b)| q < b)
            && centroids[1..].iter().zip(&thresholds).all(|(q, b)| b < q);
        if !ordered {
            return invalid("quantizer centroids and thresholds must interleave strictly");
        }
        if !(mse > 0.0 && mse <= 1.0) {
            return invalid(format!("quantizer mse {mse} outside (0, 1]"));
        }
        Ok(Self { centroids, thresholds, mse })
    }

    pub fn levels(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// `d_Q(L) = E[(Z − Q_L(Z))²]` for `Z ~ N(0,1)`.
    pub fn mse(&self) -> f64 {
        self.mse
    }

    /// Boundary `b_j`, `j ∈ 0..=L`.
    pub fn boundary(&self, j: usize) -> Bound {
        if j == 0 {
            Bound::NegInf
        } else if j >= self.levels() {
            Bound::PosInf
        } else {
            Bound::Finite(self.thresholds[j - 1])
        }
    }

    pub fn quantize(&self, z: f64) -> usize {
        self.thresholds.partition_point(|&b| b < z)
    }

    pub fn dequantize(&self, j: usize) -> Result<f64> {
        self.centroids
            .get(j)
            .copied()
            .ok_or_else(|| AtcError::InvalidInput(format!("index {j} out of range for L = {}", self.levels())))
    }

    /// `Φ(b_{j+1}) − Φ(b_j)`
    pub fn interval_prob(&self, j: usize) -> Result<f64> {
        if j >= self.levels() {
            return invalid(format!("index {j} out of range for L = {}", self.levels()));
        }
        Ok(normal::mass(self.boundary(j).finite(), self.boundary(j + 1).finite()))
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.levels()).map(|j| self.interval_prob(j).expect("index in range")).collect()
    }
}

/// Analytic MSE of a partition with the given reproduction points.
fn partition_mse(centroids: &[f64], thresholds: &[f64]) -> f64 {
    let l = centroids.len();
    (0..l)
        .map(|j| {
            let a = if j == 0 { None } else { Some(thresholds[j - 1]) };
            let b = if j + 1 == l { None } else { Some(thresholds[j]) };
            let m = interval_moments(a, b);
            let q = centroids[j];
            m.second - 2.0 * q * m.first + q * q * m.mass
        })
        .sum()
}

fn centroids_of(thresholds: &[f64]) -> Vec<f64> {
    let l = thresholds.len() + 1;
    (0..l)
        .map(|j| {
            let a = if j == 0 { None } else { Some(thresholds[j - 1]) };
            let b = if j + 1 == l { None } else { Some(thresholds[j]) };
            normal::conditional_mean(a, b)
        })
        .collect()
}

/// Fixed-point residual `b_j − (q_{j−1} + q_j)/2` over interior thresholds.
fn residual(thresholds: &[f64], centroids: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .enumerate()
        .map(|(j, &b)| b - 0.5 * (centroids[j] + centroids[j + 1]))
        .collect()
}

/// Newton step for the nearest-neighbour/centroid fixed point. The Jacobian
/// in the thresholds is tridiagonal.
fn newton_step(thresholds: &[f64], centroids: &[f64], g: &[f64]) -> Vec<f64> {
    let n = thresholds.len();
    let l = n + 1;
    // ∂q_j/∂(lower end) and ∂q_j/∂(upper end) for each interval.
    let mut d_lower = vec![0.0; l];
    let mut d_upper = vec![0.0; l];
    for j in 0..l {
        let a = if j == 0 { None } else { Some(thresholds[j - 1]) };
        let b = if j + 1 == l { None } else { Some(thresholds[j]) };
        let m = normal::mass(a, b);
        let q = centroids[j];
        if let Some(a) = a {
            d_lower[j] = normal::pdf(a) * (q - a) / m;
        }
        if let Some(b) = b {
            d_upper[j] = normal::pdf(b) * (b - q) / m;
        }
    }
    // Row i (threshold i sits between interval i and i+1).
    let diag: Vec<f64> = (0..n).map(|i| 1.0 - 0.5 * (d_upper[i] + d_lower[i + 1])).collect();
    let sub: Vec<f64> = (0..n).map(|i| -0.5 * d_lower[i]).collect(); // coefficient of threshold i-1
    let sup: Vec<f64> = (0..n).map(|i| -0.5 * d_upper[i + 1]).collect(); // coefficient of threshold i+1

    // Thomas algorithm on J·Δ = −g.
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let m = if i == 0 { diag[0] } else { diag[i] - sub[i] * c[i - 1] };
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = if i == 0 { -g[0] / m } else { (-g[i] - sub[i] * d[i - 1]) / m };
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = if i + 1 < n { d[i] - c[i] * x[i + 1] } else { d[i] };
    }
    x
}

/// Lloyd–Max quantizer with `levels` reproduction points for `N(0,1)`.
///
/// Starts from the equiprobable partition, then alternates Newton steps on
/// the fixed-point equations (falling back to a plain Lloyd update whenever a
/// damped Newton step fails to reduce the residual). Stops once no centroid
/// moves by more than `tol`.
pub fn design_lloyd_max(levels: usize, tol: f64) -> Result<LloydMaxQuantizer> {
    if levels == 0 {
        return invalid("a quantizer needs at least one level");
    }
    if levels == 1 {
        return Ok(LloydMaxQuantizer { centroids: vec![0.0], thresholds: Vec::new(), mse: 1.0 });
    }
    let l = levels;
    let mut thresholds: Vec<f64> = (1..l).map(|j| normal::quantile(j as f64 / l as f64)).collect();
    let mut centroids = centroids_of(&thresholds);

    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let ordered = |t: &[f64]| t.windows(2).all(|w| w[0] < w[1]);

    let mut converged = false;
    for _ in 0..MAX_DESIGN_ITER {
        let g = residual(&thresholds, &centroids);
        let g_norm = max_abs(&g);
        let step = newton_step(&thresholds, &centroids, &g);
        let mut next = None;
        let mut scale = 1.0;
        for _ in 0..30 {
            let cand: Vec<f64> = thresholds.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            if ordered(&cand) && cand.iter().all(|v| v.is_finite()) {
                let cq = centroids_of(&cand);
                if max_abs(&residual(&cand, &cq)) < g_norm {
                    next = Some((cand, cq));
                    break;
                }
            }
            scale *= 0.5;
        }
        let (t_new, q_new) = next.unwrap_or_else(|| {
            let t: Vec<f64> = centroids.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let q = centroids_of(&t);
            (t, q)
        });
        let movement = q_new.iter().zip(&centroids).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        thresholds = t_new;
        centroids = q_new;
        if movement < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AtcError::NumericalFailure(format!("Lloyd–Max design for L = {l} did not converge")));
    }

    // Impose exact symmetry, then rebuild thresholds as midpoints.
    let mut sym = vec![0.0; l];
    for j in 0..l {
        sym[j] = 0.5 * (centroids[j] - centroids[l - 1 - j]);
    }
    if l % 2 == 1 {
        sym[l / 2] = 0.0;
    }
    let thresholds: Vec<f64> = sym.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mse = partition_mse(&sym, &thresholds);
    LloydMaxQuantizer::from_parts(sym, thresholds, mse)
}

/// Outcome of the coarsest-admissible rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub levels: usize,
    /// No ladder entry met the target; the finest one was used.
    pub saturated: bool,
}

/// Quantizers for every admissible level count, with their index models.
#[derive(Debug, Clone)]
pub struct QuantizerBank {
    ladder: Vec<usize>,
    quantizers: Vec<LloydMaxQuantizer>,
    symbol_models: Vec<SymbolModel>,
    /// `−log2 ℙ(J = j)` under the exact interval probabilities.
    info_bits: Vec<Vec<f64>>,
}

impl PartialEq for QuantizerBank {
    fn eq(&self, other: &Self) -> bool {
        self.quantizers == other.quantizers
    }
}

impl QuantizerBank {
    pub fn design(ladder: &[usize]) -> Result<Self> {
        let mut ladder = ladder.to_vec();
        ladder.sort_unstable();
        ladder.dedup();
        if ladder.first() != Some(&1) {
            return invalid("the ladder must contain L = 1");
        }
        let quantizers = ladder
            .iter()
            .map(|&l| design_lloyd_max(l, DEFAULT_DESIGN_TOL))
            .collect::<Result<Vec<_>>>()?;
        Self::from_quantizers(quantizers)
    }

    pub fn from_quantizers(quantizers: Vec<LloydMaxQuantizer>) -> Result<Self> {
        let ladder: Vec<usize> = quantizers.iter().map(|q| q.levels()).collect();
        if ladder.first() != Some(&1) || !ladder.windows(2).all(|w| w[0] < w[1]) {
            return invalid("ladder must start at 1 and strictly increase");
        }
        if quantizers[0].mse() != 1.0 {
            return invalid("the single-level quantizer must have mse 1");
        }
        if !quantizers.windows(2).all(|w| w[1].mse() < w[0].mse()) {
            return invalid("quantizer mse must strictly decrease along the ladder");
        }
        let symbol_models = quantizers
            .iter()
            .map(|q| SymbolModel::from_probabilities(&q.probabilities()))
            .collect::<Result<Vec<_>>>()?;
        let info_bits = quantizers.iter().map(|q| q.probabilities().iter().map(|p| -p.log2()).collect()).collect();
        Ok(Self { ladder, quantizers, symbol_models, info_bits })
    }

    pub fn ladder(&self) -> &[usize] {
        &self.ladder
    }

    pub fn quantizers(&self) -> &[LloydMaxQuantizer] {
        &self.quantizers
    }

    fn position(&self, levels: usize) -> Option<usize> {
        self.ladder.binary_search(&levels).ok()
    }

    pub fn quantizer(&self, levels: usize) -> Option<&LloydMaxQuantizer> {
        self.position(levels).map(|i| &self.quantizers[i])
    }

    /// Frequency table used to arithmetic-code indices of the `levels` quantizer.
    pub fn symbol_model(&self, levels: usize) -> Option<&SymbolModel> {
        self.position(levels).map(|i| &self.symbol_models[i])
    }

    /// Ideal code length of index `j` of the `levels` quantizer, in bits.
    pub fn index_bits(&self, levels: usize, j: usize) -> Option<f64> {
        self.position(levels).and_then(|i| self.info_bits[i].get(j).copied())
    }

    /// `min{L ∈ ladder : d_Q(L) ≤ d_target}`, clamped to the finest entry.
    pub fn select_levels(&self, d_target: f64) -> Result<Selection> {
        if !(d_target > 0.0) {
            return invalid(format!("whitened target distortion must be positive, got {d_target}"));
        }
        match self.quantizers.iter().find(|q| q.mse() <= d_target) {
            Some(q) => Ok(Selection { levels: q.levels(), saturated: false }),
            None => Ok(Selection { levels: *self.ladder.last().expect("non-empty"), saturated: true }),
        }
    }
}

/// Selected level counts `L*_{c,n}` for one quality point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationMap {
    pub theta: f64,
    /// K rows of N′ level counts.
    pub levels: Vec<Vec<u32>>,
    /// Entries whose target was finer than the finest quantizer.
    pub saturated: usize,
}

impl QuantizationMap {
    pub fn row(&self, c: usize) -> &[u32] {
        &self.levels[c]
    }

    /// Number of coefficients with `L* > 1` in row `c`.
    pub fn active(&self, c: usize) -> usize {
        self.levels[c].iter().filter(|&&l| l > 1).count()
    }
}

/// `L*_{c,n} = select_levels(min{1, θ/λ_{c,n}})`
pub fn build_quantization_map(spec: &MixtureSpectrum, bank: &QuantizerBank, theta: f64) -> Result<QuantizationMap> {
    if !(theta > 0.0 && theta.is_finite()) {
        return invalid(format!("θ must be positive and finite, got {theta}"));
    }
    let mut saturated = 0;
    let mut levels = Vec::with_capacity(spec.lambdas.len());
    for row in target_distortions(spec, theta) {
        let mut out = Vec::with_capacity(row.len());
        for d in row {
            let s = bank.select_levels(d)?;
            saturated += s.saturated as usize;
            out.push(s.levels as u32);
        }
        levels.push(out);
    }
    Ok(QuantizationMap { theta, levels, saturated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_level_is_the_mean() {
        let q = design_lloyd_max(1, 1e-10).unwrap();
        assert_eq!(q.centroids(), &[0.0]);
        assert_eq!(q.mse(), 1.0);
        assert_eq!(q.quantize(-5.0), 0);
        assert_eq!(q.quantize(123.0), 0);
        assert_eq!(q.interval_prob(0).unwrap(), 1.0);
        assert_eq!(q.dequantize(0).unwrap(), 0.0);
    }

    #[test]
    fn two_level_closed_form() {
        let q = design_lloyd_max(2, 1e-10).unwrap();
        let c = (2.0 / PI).sqrt();
        assert!((q.centroids()[1] - c).abs() < 1e-12);
        assert_eq!(q.centroids()[0], -q.centroids()[1]);
        assert_eq!(q.thresholds(), &[0.0]);
        assert!((q.mse() - (1.0 - 2.0 / PI)).abs() < 1e-12);
        assert_eq!(q.quantize(-0.3), 0);
        assert_eq!(q.quantize(0.0), 0);
        assert_eq!(q.quantize(1e-300), 1);
        assert_eq!(q.interval_prob(0).unwrap(), 0.5);
        assert!(q.dequantize(2).is_err());
        assert!(q.interval_prob(2).is_err());
    }

    #[test]
    fn published_four_and_eight_level_tables() {
        // Max (1960) Gaussian tables: L=4 outputs ±0.4528, ±1.510; L=8 mse 0.03454.
        let q4 = design_lloyd_max(4, 1e-10).unwrap();
        assert!((q4.centroids()[3] - 1.510).abs() < 5e-4);
        assert!((q4.centroids()[2] - 0.4528).abs() < 5e-4);
        assert!((q4.mse() - 0.1175).abs() < 1e-4);
        let q8 = design_lloyd_max(8, 1e-10).unwrap();
        assert!((q8.mse() - 0.03454).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_conditions_hold_across_ladder() {
        for &l in &DEFAULT_LADDER {
            let q = design_lloyd_max(l, 1e-10).unwrap();
            assert_eq!(q.levels(), l);
            for (j, &c) in q.centroids().iter().enumerate() {
                let a = q.boundary(j).finite();
                let b = q.boundary(j + 1).finite();
                assert!((normal::conditional_mean(a, b) - c).abs() <= 1e-8, "L={l} j={j}");
                assert_eq!(c, -q.centroids()[l - 1 - j]);
            }
            for (j, &b) in q.thresholds().iter().enumerate() {
                assert!((b - 0.5 * (q.centroids()[j] + q.centroids()[j + 1])).abs() <= 1e-15);
            }
            let total: f64 = q.probabilities().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "L={l}: {total}");
        }
    }

    #[test]
    fn bank_selection_rule() {
        let bank = QuantizerBank::design(&[1, 2, 3, 4, 8]).unwrap();
        assert_eq!(bank.select_levels(1.0).unwrap().levels, 1);
        assert_eq!(bank.select_levels(0.4).unwrap().levels, 2);
        assert!(bank.select_levels(0.0).is_err());
        let finest = bank.select_levels(1e-6).unwrap();
        assert_eq!(finest, Selection { levels: 8, saturated: true });
        for q in bank.quantizers() {
            assert_eq!(bank.select_levels(q.mse()).unwrap().levels, q.levels());
        }
        assert!(QuantizerBank::design(&[2, 4]).is_err());
    }

    #[test]
    fn map_targets_follow_water_filling() {
        let bank = QuantizerBank::design(&DEFAULT_LADDER).unwrap();
        let theta = 0.5;
        let spec = MixtureSpectrum::new(vec![1.0], vec![vec![4.0 * theta, theta, theta / 4.0]]).unwrap();
        let map = build_quantization_map(&spec, &bank, theta).unwrap();
        let l0 = bank.select_levels(0.25).unwrap().levels as u32;
        assert_eq!(map.levels, vec![vec![l0, 1, 1]]);
        assert_eq!(l0, 3);

        let zero = build_quantization_map(&spec, &bank, 10.0).unwrap();
        assert!(zero.levels[0].iter().all(|&l| l == 1));
    }
}
