//! Metrics, rate–distortion sweeps and adaptive-versus-baseline comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecModel, CoderMode};
use crate::error::{invalid, Result};
use crate::gmm::FeatureSet;
use crate::linalg::dot;
use crate::rdtheory::{conditional_rd, genie_bound};

/// NMSE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    /// `Σ‖x_i − x̄‖²`
    #[default]
    Variance,
    /// `Σ‖x_i‖²`
    SecondMoment,
}

fn check_shapes(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return invalid(format!("shape mismatch: {}×{} vs {}×{}", a.len(), a.dim(), b.len(), b.dim()));
    }
    if a.is_empty() {
        return invalid("metrics need at least one vector");
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared error per vector.
pub fn mse_per_vector(original: &FeatureSet, recon: &FeatureSet) -> Result<f64> {
    check_shapes(original, recon)?;
    Ok(original.rows().zip(recon.rows()).map(|(a, b)| sq_dist(a, b)).sum::<f64>() / original.len() as f64)
}

pub fn nmse(original: &FeatureSet, recon: &FeatureSet, norm: Normalization) -> Result<f64> {
    check_shapes(original, recon)?;
    let num: f64 = original.rows().zip(recon.rows()).map(|(a, b)| sq_dist(a, b)).sum();
    let den: f64 = match norm {
        Normalization::Variance => {
            let mean = original.mean();
            original.rows().map(|a| sq_dist(a, &mean)).sum()
        }
        Normalization::SecondMoment => original.rows().map(|a| dot(a, a)).sum(),
    };
    if !(den > 0.0) {
        return invalid("NMSE denominator is zero");
    }
    Ok(num / den)
}

pub fn mean_cosine(original: &FeatureSet, recon: &FeatureSet) -> Result<f64> {
    check_shapes(original, recon)?;
    let mut acc = 0.0;
    for (a, b) in original.rows().zip(recon.rows()) {
        let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
        if na == 0.0 || nb == 0.0 {
            return invalid("cosine similarity is undefined for zero vectors");
        }
        acc += dot(a, b) / (na * nb);
    }
    Ok(acc / original.len() as f64)
}

/// One (model, θ) cell. Rates are bits per vector unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub k: usize,
    /// Dimension the mixture is fitted in (`N` without PCA).
    pub m: usize,
    pub theta: f64,
    pub model_rate_bits: f64,
    pub bits_per_dim: f64,
    pub actual_bits: f64,
    pub flc_bits: f64,
    pub nmse: f64,
    pub mean_cosine: f64,
    /// Source-domain squared error per vector.
    pub mse_per_vector: f64,
    /// `Σ_n λ_{ĉ,n}(z_n − ẑ_n)²` per vector, i.e. squared error in the
    /// mixture's own domain.
    pub reduced_mse: f64,
    pub saturated: usize,
    pub theory_conditional_rate: f64,
    pub theory_genie_rate: f64,
    /// `D(θ)` plus the energy discarded by the PCA stage, if any.
    pub theory_distortion: f64,
    pub discarded_energy: f64,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "K",
    "M",
    "theta",
    "model_rate_bits",
    "bits_per_dim",
    "actual_bits",
    "flc_bits",
    "nmse",
    "mean_cosine",
    "mse_per_vector",
    "reduced_mse",
    "saturated",
    "theory_conditional_rate",
    "theory_genie_rate",
    "theory_distortion",
    "discarded_energy",
    "normalization",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdReport {
    pub normalization: Normalization,
    pub rows: Vec<RdRow>,
}

fn norm_name(n: Normalization) -> &'static str {
    match n {
        Normalization::Variance => "variance",
        Normalization::SecondMoment => "second_moment",
    }
}

impl RdReport {
    pub fn to_csv(&self) -> String {
        let mut s = CSV_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.m,
                r.theta,
                r.model_rate_bits,
                r.bits_per_dim,
                r.actual_bits,
                r.flc_bits,
                r.nmse,
                r.mean_cosine,
                r.mse_per_vector,
                r.reduced_mse,
                r.saturated,
                r.theory_conditional_rate,
                r.theory_genie_rate,
                r.theory_distortion,
                r.discarded_energy,
                norm_name(self.normalization)
            )
            .expect("writing to a String cannot fail");
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("row serializes");
                v["normalization"] = norm_name(self.normalization).into();
                v.to_string() + "\n"
            })
            .collect()
    }

    /// Rows belonging to mixtures with `k` components, in θ order.
    pub fn curve(&self, k: usize) -> Vec<&RdRow> {
        self.rows.iter().filter(|r| r.k == k).collect()
    }
}

/// Encodes and decodes `data` at quality point `theta_idx` and measures
/// every column of [`RdRow`].
pub fn evaluate_point(model: &CodecModel, theta_idx: usize, data: &FeatureSet, norm: Normalization) -> Result<RdRow> {
    if data.is_empty() {
        return invalid("evaluation needs at least one vector");
    }
    let map = model.map(theta_idx)?;
    let per = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let code = model.analyze(theta_idx, x)?;
            let seg = model.pack(theta_idx, &code, CoderMode::Arithmetic)?;
            let xhat = model.decode_vector(theta_idx, &seg, CoderMode::Arithmetic)?;
            let lambdas = model.gmm().component(code.component).eigenvalues();
            let whitened: f64 =
                code.z.iter().zip(&code.zhat).zip(lambdas).map(|((z, zh), l)| l * (z - zh) * (z - zh)).sum();
            let flc = model.flc_bits_for(theta_idx, code.component)? as f64;
            Ok((xhat, code.model_bits, 8.0 * seg.len() as f64, flc, whitened))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let mut recon = Vec::with_capacity(data.len() * data.dim());
    let (mut rate, mut actual, mut flc, mut whitened) = (0.0, 0.0, 0.0, 0.0);
    for (xhat, r, a, f, w) in per {
        recon.extend(xhat);
        rate += r;
        actual += a;
        flc += f;
        whitened += w;
    }
    let recon = FeatureSet::new(data.dim(), recon, None)?;
    let spec = model.spectrum();
    let cond = conditional_rd(&spec, map.theta);
    let genie = genie_bound(&spec, map.theta);
    let discarded = model.pca().map_or(0.0, |p| p.discarded_energy());
    let cosine = mean_cosine(data, &recon).unwrap_or(f64::NAN);
    Ok(RdRow {
        k: model.k(),
        m: model.coded_dim(),
        theta: map.theta,
        model_rate_bits: rate / n,
        bits_per_dim: rate / n / model.input_dim() as f64,
        actual_bits: actual / n,
        flc_bits: flc / n,
        nmse: nmse(data, &recon, norm)?,
        mean_cosine: cosine,
        mse_per_vector: mse_per_vector(data, &recon)?,
        reduced_mse: whitened / n,
        saturated: map.saturated,
        theory_conditional_rate: cond.rate_bits,
        theory_genie_rate: genie.rate_bits,
        theory_distortion: cond.distortion + discarded,
        discarded_energy: discarded,
    })
}

/// One row per (model, quality point). With `thetas` given, every model is
/// rebuilt on exactly those water levels; otherwise each model's stored
/// quality points are used. Rows come out sorted by `(K, θ)`.
pub fn rd_sweep(models: &[CodecModel], data: &FeatureSet, thetas: Option<&[f64]>, norm: Normalization) -> Result<RdReport> {
    if let Some(first) = models.first() {
        if models.iter().any(|m| m.input_dim() != first.input_dim()) {
            return invalid("all models in a sweep must share the input dimension");
        }
    }
    let mut rows = Vec::new();
    for model in models {
        let rebuilt;
        let m = match thetas {
            Some(t) => {
                rebuilt = CodecModel::new(model.gmm().clone(), model.bank().clone(), t, model.pca().cloned())?;
                &rebuilt
            }
            None => model,
        };
        for t in 0..m.maps().len() {
            rows.push(evaluate_point(m, t, data, norm)?);
        }
    }
    rows.sort_by(|a, b| a.k.cmp(&b.k).then(a.theta.total_cmp(&b.theta)));
    Ok(RdReport { normalization: norm, rows })
}

/// Piecewise-linear curve in (rate, ln NMSE) and (rate, cosine).
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    rate: Vec<f64>,
    log_nmse: Vec<f64>,
    cosine: Vec<f64>,
}

impl RdCurve {
    /// Collapses equal rates to the best NMSE seen at that rate.
    pub fn from_rows(rows: &[&RdRow]) -> Result<Self> {
        let mut pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.model_rate_bits, r.nmse, r.mean_cosine)).collect();
        if pts.is_empty() {
            return invalid("curve needs at least one point");
        }
        if pts.iter().any(|p| !(p.1 > 0.0)) {
            return invalid("NMSE must be positive to interpolate on a log scale");
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.dedup_by(|later, earlier| later.0 == earlier.0);
        Ok(Self {
            rate: pts.iter().map(|p| p.0).collect(),
            log_nmse: pts.iter().map(|p| p.1.ln()).collect(),
            cosine: pts.iter().map(|p| p.2).collect(),
        })
    }

    pub fn rate_range(&self) -> (f64, f64) {
        (self.rate[0], *self.rate.last().expect("non-empty"))
    }

    pub fn rates(&self) -> &[f64] {
        &self.rate
    }

    fn interp(&self, ys: &[f64], r: f64) -> Option<f64> {
        let (lo, hi) = self.rate_range();
        if r < lo || r > hi {
            return None;
        }
        let i = self.rate.partition_point(|&x| x < r);
        if self.rate[i] == r {
            return Some(ys[i]);
        }
        let (r0, r1) = (self.rate[i - 1], self.rate[i]);
        let t = (r - r0) / (r1 - r0);
        Some(ys[i - 1] + t * (ys[i] - ys[i - 1]))
    }

    /// NMSE at rate `r`, or `None` outside the measured range.
    pub fn nmse_at(&self, r: f64) -> Option<f64> {
        self.interp(&self.log_nmse, r).map(f64::exp)
    }

    pub fn cosine_at(&self, r: f64) -> Option<f64> {
        self.interp(&self.cosine, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBucket {
    pub rate_bits: f64,
    pub nmse_first: f64,
    pub nmse_second: f64,
    /// `first − second`; negative means the first model is better.
    pub delta_nmse: f64,
    pub delta_cosine: f64,
    /// `(second − first) / second`
    pub relative_gain: f64,
    /// The rate is one of the first model's own sweep points.
    pub from_first: bool,
    pub from_second: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub buckets: Vec<RateBucket>,
    /// Fraction of buckets where the first model's NMSE is no worse.
    pub win_rate: f64,
    /// Sweep points of each model whose rate lies outside the other curve.
    pub unmatched_first: usize,
    pub unmatched_second: usize,
}

/// Compares two RD curves on the union of their rate grids, restricted to
/// the rates both curves cover. Swapping the arguments negates every delta.
pub fn compare_curves(first: &RdCurve, second: &RdCurve) -> Comparison {
    let mut grid: Vec<(f64, bool, bool)> = Vec::new();
    for &r in first.rates() {
        grid.push((r, true, false));
    }
    for &r in second.rates() {
        grid.push((r, false, true));
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, bool, bool)> = Vec::new();
    for g in grid {
        match merged.last_mut() {
            Some(last) if last.0 == g.0 => {
                last.1 |= g.1;
                last.2 |= g.2;
            }
            _ => merged.push(g),
        }
    }
    let mut buckets = Vec::new();
    let (mut unmatched_first, mut unmatched_second) = (0, 0);
    for (r, f, s) in merged {
        match (first.nmse_at(r), second.nmse_at(r)) {
            (Some(a), Some(b)) => {
                let ca = first.cosine_at(r).expect("range checked");
                let cb = second.cosine_at(r).expect("range checked");
                buckets.push(RateBucket {
                    rate_bits: r,
                    nmse_first: a,
                    nmse_second: b,
                    delta_nmse: a - b,
                    delta_cosine: ca - cb,
                    relative_gain: (b - a) / b,
                    from_first: f,
                    from_second: s,
                });
            }
            _ => {
                unmatched_first += f as usize;
                unmatched_second += s as usize;
            }
        }
    }
    let wins = buckets.iter().filter(|b| b.delta_nmse <= 0.0).count();
    let win_rate = if buckets.is_empty() { 0.0 } else { wins as f64 / buckets.len() as f64 };
    Comparison { buckets, win_rate, unmatched_first, unmatched_second }
}

/// Sweeps both models over their stored quality points and compares the
/// resulting curves.
pub fn compare_adaptive(
    adaptive: &CodecModel,
    baseline: &CodecModel,
    data: &FeatureSet,
    norm: Normalization,
) -> Result<(Comparison, RdReport, RdReport)> {
    let ra = rd_sweep(std::slice::from_ref(adaptive), data, None, norm)?;
    let rb = rd_sweep(std::slice::from_ref(baseline), data, None, norm)?;
    let ca = RdCurve::from_rows(&ra.rows.iter().collect::<Vec<_>>())?;
    let cb = RdCurve::from_rows(&rb.rows.iter().collect::<Vec<_>>())?;
    Ok((compare_curves(&ca, &cb), ra, rb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>]) -> FeatureSet {
        FeatureSet::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn nmse_anchors() {
        let x = set(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 5.0]]);
        assert_eq!(nmse(&x, &x, Normalization::Variance).unwrap(), 0.0);
        let mean = x.mean();
        let flat = set(&[mean.clone(), mean.clone(), mean]);
        assert!((nmse(&x, &flat, Normalization::Variance).unwrap() - 1.0).abs() < 1e-15);
        let c = set(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(nmse(&c, &c, Normalization::Variance).is_err());
        assert_eq!(nmse(&c, &c, Normalization::SecondMoment).unwrap(), 0.0);
    }

    #[test]
    fn cosine_anchors() {
        let x = set(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        let neg = set(&[vec![-1.0, -2.0], vec![-3.0, 1.0]]);
        let dbl = set(&[vec![2.0, 4.0], vec![6.0, -2.0]]);
        assert!((mean_cosine(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((mean_cosine(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((mean_cosine(&x, &dbl).unwrap() - 1.0).abs() < 1e-15);
        assert!(mean_cosine(&x, &set(&[vec![0.0, 0.0], vec![1.0, 1.0]])).is_err());
    }

    fn row(k: usize, rate: f64, nmse: f64) -> RdRow {
        RdRow {
            k,
            m: 1,
            theta: 1.0 / (1.0 + rate),
            model_rate_bits: rate,
            bits_per_dim: rate,
            actual_bits: rate,
            flc_bits: rate,
            nmse,
            mean_cosine: 1.0 - nmse,
            mse_per_vector: nmse,
            reduced_mse: nmse,
            saturated: 0,
            theory_conditional_rate: rate,
            theory_genie_rate: rate,
            theory_distortion: nmse,
            discarded_energy: 0.0,
        }
    }

    #[test]
    fn comparison_is_antisymmetric() {
        let a = [row(2, 1.0, 0.5), row(2, 3.0, 0.1), row(2, 6.0, 0.01)];
        let b = [row(1, 0.0, 1.0), row(1, 2.0, 0.4), row(1, 5.0, 0.05)];
        let ca = RdCurve::from_rows(&a.iter().collect::<Vec<_>>()).unwrap();
        let cb = RdCurve::from_rows(&b.iter().collect::<Vec<_>>()).unwrap();
        let ab = compare_curves(&ca, &cb);
        let ba = compare_curves(&cb, &ca);
        assert_eq!(ab.buckets.len(), ba.buckets.len());
        for (x, y) in ab.buckets.iter().zip(&ba.buckets) {
            assert_eq!(x.rate_bits, y.rate_bits);
            assert_eq!(x.delta_nmse, -y.delta_nmse);
            assert_eq!(x.delta_cosine, -y.delta_cosine);
        }
        assert_eq!(ab.unmatched_first, 1);
        assert_eq!(ab.unmatched_second, 1);
        let same = compare_curves(&ca, &ca);
        assert!(same.buckets.iter().all(|b| b.delta_nmse == 0.0 && b.delta_cosine == 0.0));
        assert_eq!(same.win_rate, 1.0);
    }

    #[test]
    fn log_linear_interpolation() {
        let rows = [row(1, 0.0, 1.0), row(1, 2.0, 0.01)];
        let c = RdCurve::from_rows(&rows.iter().collect::<Vec<_>>()).unwrap();
        assert!((c.nmse_at(1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(c.nmse_at(2.5), None);
    }

    #[test]
    fn csv_has_fixed_header() {
        let r = RdReport { normalization: Normalization::Variance, rows: vec![row(1, 1.0, 0.5)] };
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap().split(',').count(), CSV_COLUMNS.len());
        let json: serde_json::Value = serde_json::from_str(r.to_jsonl().trim()).unwrap();
        assert_eq!(json["k"], 1);
        assert_eq!(json["normalization"], "variance");
    }
}
