//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use atc_core::codec::{encode_set, featio, CodecModel, CoderMode, EncodedStream};
use atc_core::entropycoder::SymbolModel;
use atc_core::gmm::{FeatureSet, GmmModel};
use atc_core::linalg::{EigenPair, Matrix};
use atc_core::quantizer::QuantizerBank;
use atc_core::rdtheory::MixtureSpectrum;
use rand::Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `∫ f` over `[a, b]` by composite Simpson with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `E[Z | b_{j-1} < Z ≤ b_j]` by quadrature, infinite ends cut at ±14σ
/// beyond the finite one.
pub fn truncated_mean(thresholds: &[f64], j: usize) -> f64 {
    let l = thresholds.len() + 1;
    let a = if j == 0 { thresholds.first().map_or(-14.0, |t| t.min(0.0) - 14.0) } else { thresholds[j - 1] };
    let b = if j + 1 == l { thresholds.last().map_or(14.0, |t| t.max(0.0) + 14.0) } else { thresholds[j] };
    // Shift by the interval's location so the integrand stays well scaled
    // deep in the tails.
    let peak = if a > 0.0 { a } else if b < 0.0 { b } else { 0.0 };
    let scale = std_pdf(peak);
    let m0 = simpson(|x| std_pdf(x) / scale, a, b, 4000);
    let m1 = simpson(|x| (x - peak) * std_pdf(x) / scale, a, b, 4000);
    peak + m1 / m0
}

/// Random alphabet of 1..=300 symbols with skewed, sometimes vanishing,
/// probabilities.
pub fn random_symbol_model(rng: &mut impl Rng) -> SymbolModel {
    let m = rng.random_range(1..=300usize);
    let skew: f64 = rng.random_range(0.0..6.0);
    let p: Vec<f64> = (0..m)
        .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random::<f64>().powf(skew) })
        .collect();
    let p = if p.iter().sum::<f64>() > 0.0 { p } else { vec![1.0; m] };
    SymbolModel::from_probabilities(&p).unwrap()
}

/// Draws a symbol with probability `freq/TOTAL`.
pub fn draw_symbol(m: &SymbolModel, rng: &mut impl Rng) -> usize {
    let v = rng.random_range(0..atc_core::entropycoder::TOTAL);
    m.cum_freq().partition_point(|&c| c <= v) - 1
}

pub fn random_spectrum(rng: &mut impl Rng) -> MixtureSpectrum {
    let k = rng.random_range(1..=8);
    let n = rng.random_range(1..=40);
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let lambdas = (0..k)
        .map(|_| {
            let mut l: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-4.0..2.0))).collect();
            l.sort_by(|a, b| b.total_cmp(a));
            l
        })
        .collect();
    MixtureSpectrum::new(weights.iter().map(|w| w / total).collect(), lambdas).unwrap()
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability of `(a, b]` under N(0,1), evaluated on whichever side of zero
/// keeps both terms away from 1.
fn interval_prob(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        phi(-a) - phi(-b)
    } else {
        phi(b) - phi(a)
    }
}

/// Straight-line model rate: MAP mode by explicit scoring, whitening by
/// explicit loops, linear scan for the quantizer cell, and interval
/// probabilities from `erfc`.
pub fn naive_model_rate(model: &CodecModel, t: usize, data: &FeatureSet) -> f64 {
    let g = model.gmm();
    let map = &model.maps()[t];
    let mut total = 0.0;
    for x in data.rows() {
        let mut best = (f64::INFINITY, 0usize, Vec::new());
        for c in 0..g.k() {
            let comp = g.component(c);
            let n = x.len();
            let mut z = vec![0.0; n];
            for (k, zk) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += comp.eigen.vectors.get(r, k) * (x[r] - comp.mean[r]);
                }
                *zk = acc / comp.eigenvalues()[k].sqrt();
            }
            let score = z.iter().map(|v| v * v).sum::<f64>()
                + comp.eigenvalues().iter().map(|l| l.ln()).sum::<f64>()
                - 2.0 * comp.weight.ln();
            if score < best.0 {
                best = (score, c, z);
            }
        }
        let (_, c, z) = best;
        total -= g.component(c).weight.log2();
        for (n, &l) in map.levels[c].iter().enumerate() {
            if l <= 1 {
                continue;
            }
            let q = model.bank().quantizer(l as usize).unwrap();
            let th = q.thresholds();
            let mut j = 0;
            while j < th.len() && th[j] < z[n] {
                j += 1;
            }
            let a = if j == 0 { f64::NEG_INFINITY } else { th[j - 1] };
            let b = if j == th.len() { f64::INFINITY } else { th[j] };
            total -= interval_prob(a, b).log2();
        }
    }
    total / data.len() as f64
}

/// Small deterministic model, features, stream and decoded output pinned as
/// golden files.
pub fn build_fixtures() -> (FeatureSet, CodecModel, EncodedStream, FeatureSet) {
    let rot = std::f64::consts::FRAC_1_SQRT_2;
    let eig_a = EigenPair { values: vec![4.0, 1.0, 0.25], vectors: Matrix::identity(3) };
    let eig_b = EigenPair {
        values: vec![2.0, 0.5, 0.125],
        vectors: Matrix::from_row_major(3, 3, vec![rot, -rot, 0.0, rot, rot, 0.0, 0.0, 0.0, 1.0]).unwrap(),
    };
    let gmm = GmmModel::from_eigen(&[0.75, 0.25], vec![vec![0.0, 0.0, 0.0], vec![6.0, -4.0, 2.0]], vec![eig_a, eig_b], 1e-6).unwrap();
    let bank = QuantizerBank::design(&[1, 2, 3, 4, 8, 16]).unwrap();
    let model = CodecModel::new(gmm, bank, &[4.0, 0.5, 0.05], None).unwrap();
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|i| {
            let t = i as f64;
            let base = if i % 3 == 2 { [6.0, -4.0, 2.0] } else { [0.0, 0.0, 0.0] };
            vec![base[0] + (t * 0.9).sin() * 1.5, base[1] + (t * 1.7).cos(), base[2] + 0.25 * t - 1.0]
        })
        .collect();
    // Round through f32 so the ATCF file reproduces the exact inputs.
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect();
    let features = FeatureSet::from_rows(3, &rows).unwrap().with_labels(Some(vec![0, 0, 1, 0, 0, 1, 0, 0])).unwrap();
    let stream = encode_set(&model, 1, &features, CoderMode::Arithmetic).unwrap();
    let decoded = atc_core::codec::decode_set(&model, &stream).unwrap();
    (features, model, stream, decoded)
}

pub fn fixture_bytes() -> [(&'static str, Vec<u8>); 4] {
    let (f, m, s, d) = build_fixtures();
    [
        ("features.atcf", featio::write_features(&f, featio::Dtype::F32)),
        ("model.atcm", atc_core::codec::serialize_model(&m)),
        ("stream.atcs", s.to_bytes()),
        ("decoded.atcf", featio::write_features(&d, featio::Dtype::F64)),
    ]
}
