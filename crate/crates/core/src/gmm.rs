//! Gaussian mixture models: storage, EM and label-driven fitting, MAP mode
//! selection, per-mode whitening and sampling.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::{regularize_spd, sym_eig, dot, EigenPair, Matrix, SymMatrix};
use crate::rng::seeded;

/// Default diagonal regularization added to every fitted covariance.
pub const DEFAULT_REG: f64 = 1e-6;

/// Rows per work unit when the E/M steps fan out over threads. Partial sums
/// are always combined in chunk order, so results do not depend on the
/// thread count.
const CHUNK_ROWS: usize = 2048;

const KMEANS_SUBSAMPLE: usize = 10_000;

/// A batch of `dim`-dimensional feature vectors with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<u32>>,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if dim == 0 {
            return invalid("feature dimension must be positive");
        }
        if data.len() % dim != 0 {
            return invalid(format!("{} values do not form rows of length {dim}", data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite feature value at flat index {i}"));
        }
        let count = data.len() / dim;
        if let Some(l) = &labels {
            if l.len() != count {
                return invalid(format!("{} labels for {count} vectors", l.len()));
            }
        }
        Ok(Self { dim, data, labels })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return invalid(format!("row of length {} in a set of dim {dim}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, None)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return invalid(format!("{} labels for {} vectors", l.len(), self.len()));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Rows `start..end` (labels carried along).
    pub fn slice(&self, start: usize, end: usize) -> FeatureSet {
        FeatureSet {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, &x) in m.iter_mut().zip(r) {
                *a += x;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Covariance about `mean`, divided by `count - ddof`.
    pub fn covariance(&self, mean: &[f64], ddof: usize) -> Result<SymMatrix> {
        let n = self.dim;
        if self.len() <= ddof {
            return invalid(format!("covariance needs more than {ddof} samples"));
        }
        let mut acc = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        for r in self.rows() {
            for k in 0..n {
                d[k] = r[k] - mean[k];
            }
            for i in 0..n {
                let di = d[i];
                let row = &mut acc[i * n..(i + 1) * n];
                for j in i..n {
                    row[j] += di * d[j];
                }
            }
        }
        let denom = (self.len() - ddof) as f64;
        for i in 0..n {
            for j in i..n {
                let v = acc[i * n + j] / denom;
                acc[i * n + j] = v;
                acc[j * n + i] = v;
            }
        }
        SymMatrix::from_row_major(n, acc)
    }
}

/// One mixture component in eigen form.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// `U_c`, `Λ_c` with every eigenvalue at or above `eig_floor`.
    pub eigen: EigenPair,
    pub eig_floor: f64,
    sqrt_vals: Vec<f64>,
    inv_sqrt_vals: Vec<f64>,
    log_det: f64,
}

impl GmmComponent {
    fn new(weight: f64, mean: Vec<f64>, mut eigen: EigenPair, reg: f64) -> Self {
        let lmax = eigen.values.first().copied().unwrap_or(0.0);
        let eig_floor = reg.max(1e-12 * lmax);
        eigen.values.iter_mut().for_each(|l| *l = l.max(eig_floor));
        let sqrt_vals: Vec<f64> = eigen.values.iter().map(|l| l.sqrt()).collect();
        let inv_sqrt_vals = sqrt_vals.iter().map(|s| 1.0 / s).collect();
        let log_det = eigen.values.iter().map(|l| l.ln()).sum();
        Self { weight, mean, eigen, eig_floor, sqrt_vals, inv_sqrt_vals, log_det }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    /// `Σ_n ln λ_{c,n}` over the floored spectrum.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn covariance(&self) -> SymMatrix {
        self.eigen.reconstruct()
    }

    /// `Λ^{-1/2} Uᵀ (x − μ)`
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut z = self.eigen.vectors.tr_mul_vec(&d);
        for (zn, s) in z.iter_mut().zip(&self.inv_sqrt_vals) {
            *zn *= s;
        }
        z
    }

    /// `U Λ^{1/2} z + μ`
    pub fn unwhiten(&self, z: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = z.iter().zip(&self.sqrt_vals).map(|(a, s)| a * s).collect();
        let mut x = self.eigen.vectors.mul_vec(&scaled);
        for (xk, m) in x.iter_mut().zip(&self.mean) {
            *xk += m;
        }
        x
    }

    fn log_density_from_z(&self, z: &[f64]) -> f64 {
        let n = z.len() as f64;
        -0.5 * (n * (2.0 * PI).ln() + self.log_det + dot(z, z))
    }
}

/// K-component full-covariance Gaussian mixture over `dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    reg: f64,
    components: Vec<GmmComponent>,
}

impl GmmModel {
    /// Builds a model from already-decomposed components. Weights are
    /// renormalized; eigenvalues are floored at `max(reg, 1e-12·λ_max)`.
    pub fn from_eigen(weights: &[f64], means: Vec<Vec<f64>>, eigens: Vec<EigenPair>, reg: f64) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return invalid("mixture needs at least one component");
        }
        if means.len() != k || eigens.len() != k {
            return invalid("weights, means and eigendecompositions disagree on K");
        }
        if !(reg > 0.0 && reg.is_finite()) {
            return invalid(format!("regularization must be positive, got {reg}"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return invalid("mixture weights must be positive and finite");
        }
        let dim = means[0].len();
        if dim == 0 {
            return invalid("mixture dimension must be positive");
        }
        for (m, e) in means.iter().zip(&eigens) {
            if m.len() != dim || e.dim() != dim || e.vectors.rows() != dim || e.vectors.cols() != dim {
                return invalid("component shapes disagree");
            }
            if m.iter().chain(&e.values).chain(e.vectors.as_slice()).any(|v| !v.is_finite()) {
                return invalid("component parameters must be finite");
            }
        }
        let total: f64 = weights.iter().sum();
        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self::assemble(dim, &normalized, means, eigens, reg))
    }

    /// Rebuilds a stored model without renormalizing, so a load/save cycle
    /// is bit-exact. Weights must already sum to one within 1e-9.
    pub fn from_stored(weights: &[f64], means: Vec<Vec<f64>>, eigens: Vec<EigenPair>, reg: f64) -> Result<Self> {
        let check = Self::from_eigen(weights, means.clone(), eigens.clone(), reg)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("stored weights sum to {total}"));
        }
        Ok(Self::assemble(check.dim, weights, means, eigens, reg))
    }

    fn assemble(dim: usize, weights: &[f64], means: Vec<Vec<f64>>, eigens: Vec<EigenPair>, reg: f64) -> Self {
        let components = weights
            .iter()
            .zip(means)
            .zip(eigens)
            .map(|((&w, m), e)| GmmComponent::new(w, m, e, reg))
            .collect();
        Self { dim, reg, components }
    }

    /// Regularizes each covariance with `reg·I`, then eigendecomposes it.
    pub fn from_covariances(weights: &[f64], means: Vec<Vec<f64>>, covs: &[SymMatrix], reg: f64) -> Result<Self> {
        let eigens = covs
            .iter()
            .map(|c| regularize_spd(c, reg).and_then(|r| sym_eig(&r)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_eigen(weights, means, eigens, reg)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &GmmComponent {
        &self.components[c]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn whiten(&self, c: usize, x: &[f64]) -> Vec<f64> {
        self.components[c].whiten(x)
    }

    pub fn unwhiten(&self, c: usize, z: &[f64]) -> Vec<f64> {
        self.components[c].unwhiten(z)
    }

    /// MAP score `‖z_c‖² + Σ ln λ_{c,n} − 2 ln π_c` (lower is better).
    pub fn map_score(&self, c: usize, z: &[f64]) -> f64 {
        let comp = &self.components[c];
        dot(z, z) + comp.log_det - 2.0 * comp.weight.ln()
    }

    /// MAP component for `x` with its whitened vector. Ties go to the lower index.
    pub fn map_component_whitened(&self, x: &[f64]) -> (usize, Vec<f64>) {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for c in 0..self.k() {
            let z = self.whiten(c, x);
            let s = self.map_score(c, &z);
            if best.as_ref().is_none_or(|(_, bs, _)| s < *bs) {
                best = Some((c, s, z));
            }
        }
        let (c, _, z) = best.expect("mixture has at least one component");
        (c, z)
    }

    pub fn map_component(&self, x: &[f64]) -> usize {
        if self.k() == 1 {
            return 0;
        }
        self.map_component_whitened(x).0
    }

    /// `ln π_c + ln N(x; μ_c, Σ_c)` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_density_from_z(&c.whiten(x)))
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    /// Total log-likelihood in nats.
    pub fn log_likelihood(&self, data: &FeatureSet) -> Result<f64> {
        self.check_dim(data)?;
        let partial: Vec<f64> = data
            .as_slice()
            .par_chunks(CHUNK_ROWS * self.dim)
            .map(|chunk| chunk.chunks_exact(self.dim).map(|x| self.log_density(x)).sum::<f64>())
            .collect();
        Ok(partial.iter().sum())
    }

    /// i.i.d. draws; labels record the drawn component.
    pub fn sample(&self, n: usize, seed: u64) -> FeatureSet {
        let mut rng = seeded(seed);
        let cum: Vec<f64> = self
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; self.dim];
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
            let c = cum.iter().position(|&b| u < b).unwrap_or(cum.len() - 1);
            for zn in z.iter_mut() {
                *zn = rng.sample(StandardNormal);
            }
            data.extend(self.unwhiten(c, &z));
            labels.push(c as u32);
        }
        FeatureSet { dim: self.dim, data, labels: Some(labels) }
    }

    fn check_dim(&self, data: &FeatureSet) -> Result<()> {
        if data.dim() != self.dim {
            return invalid(format!("data dim {} does not match model dim {}", data.dim(), self.dim));
        }
        Ok(())
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub k: usize,
    pub reg: f64,
    pub seed: u64,
    /// Stop once the relative log-likelihood gain drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl EmConfig {
    pub fn new(k: usize) -> Self {
        Self { k, reg: DEFAULT_REG, seed: 0, tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    /// Log-likelihood (nats) of the model entering each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components reseeded after their responsibility mass vanished.
    pub reinitializations: usize,
    /// Indices into `log_likelihood` whose preceding M-step reseeded a component.
    pub reinit_at: Vec<usize>,
}

/// Full-covariance EM seeded by k-means++.
pub fn fit_em(data: &FeatureSet, cfg: &EmConfig) -> Result<(GmmModel, FitReport)> {
    let n = data.len();
    if cfg.k == 0 {
        return invalid("K must be at least 1");
    }
    if n < cfg.k {
        return invalid(format!("{n} samples cannot support {} components", cfg.k));
    }
    if !(cfg.reg > 0.0) {
        return invalid("regularization must be positive");
    }
    let mut rng = seeded(cfg.seed);
    let resp = kmeans_pp_responsibilities(data, cfg.k, &mut rng);
    let mut report = FitReport::default();
    let (mut model, mut reseeded) = m_step(data, &resp, cfg.k, cfg.reg)?;
    report.reinitializations += reseeded;

    for iter in 0..cfg.max_iter {
        let (resp, ll) = e_step(&model, data);
        report.log_likelihood.push(ll);
        if reseeded > 0 {
            report.reinit_at.push(report.log_likelihood.len() - 1);
        }
        report.iterations = iter;
        if report.log_likelihood.len() >= 2 && reseeded == 0 {
            let prev = report.log_likelihood[report.log_likelihood.len() - 2];
            if ll - prev < cfg.tol * prev.abs() {
                report.converged = true;
                break;
            }
        }
        let (next, r) = m_step(data, &resp, cfg.k, cfg.reg)?;
        model = next;
        reseeded = r;
        report.reinitializations += r;
        report.iterations = iter + 1;
    }
    Ok((model, report))
}

/// Component statistics from labels: samples with `superclass_map[label] = c`
/// form component `c`. Superclass ids must cover `0..K` with at least two
/// samples each.
pub fn fit_supervised(data: &FeatureSet, superclass_map: &BTreeMap<u32, u32>, reg: f64) -> Result<GmmModel> {
    let labels = match data.labels() {
        Some(l) => l,
        None => return invalid("supervised fit needs labels"),
    };
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        let Some(&c) = superclass_map.get(l) else {
            return invalid(format!("label {l} has no superclass"));
        };
        groups.entry(c).or_default().push(i);
    }
    let k = superclass_map.values().max().map(|m| *m as usize + 1).unwrap_or(0);
    let (mut weights, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k as u32 {
        let idx = groups.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        if idx.len() < 2 {
            return invalid(format!("superclass {c} has {} samples; at least 2 are needed", idx.len()));
        }
        let mut rows = Vec::with_capacity(idx.len() * data.dim());
        for &i in idx {
            rows.extend_from_slice(data.row(i));
        }
        let sub = FeatureSet::new(data.dim(), rows, None)?;
        let mean = sub.mean();
        covs.push(sub.covariance(&mean, 0)?);
        means.push(mean);
        weights.push(idx.len() as f64 / data.len() as f64);
    }
    GmmModel::from_covariances(&weights, means, &covs, reg)
}

fn kmeans_pp_responsibilities(data: &FeatureSet, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.len();
    let sub: Vec<usize> = if n <= KMEANS_SUBSAMPLE {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, KMEANS_SUBSAMPLE).into_vec();
        v.sort_unstable();
        v
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut centers: Vec<usize> = vec![sub[rng.random_range(0..sub.len())]];
    let mut d2: Vec<f64> = sub.iter().map(|&i| sq(data.row(i), data.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = sub.len() - 1;
            for (j, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..sub.len())
        };
        let c = sub[pick];
        centers.push(c);
        for (j, &i) in sub.iter().enumerate() {
            d2[j] = d2[j].min(sq(data.row(i), data.row(c)));
        }
    }

    let mut resp = vec![0.0; n * k];
    for (i, x) in data.rows().enumerate() {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (c, &ci) in centers.iter().enumerate() {
            let d = sq(x, data.row(ci));
            if d < bd {
                bd = d;
                best = c;
            }
        }
        resp[i * k + best] = 1.0;
    }
    resp
}

/// Responsibilities (row-major n×K) and total log-likelihood.
fn e_step(model: &GmmModel, data: &FeatureSet) -> (Vec<f64>, f64) {
    let k = model.k();
    let dim = data.dim();
    let parts: Vec<(Vec<f64>, f64)> = data
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .map(|chunk| {
            let mut resp = Vec::with_capacity(chunk.len() / dim * k);
            let mut ll = 0.0;
            for x in chunk.chunks_exact(dim) {
                let lj = model.log_joint(x);
                let lse = log_sum_exp(&lj);
                ll += lse;
                resp.extend(lj.iter().map(|v| (v - lse).exp()));
            }
            (resp, ll)
        })
        .collect();
    let mut resp = Vec::with_capacity(data.len() * k);
    let mut ll = 0.0;
    for (r, l) in parts {
        resp.extend(r);
        ll += l;
    }
    (resp, ll)
}

/// Weighted moments per component; returns the model and the number of
/// components reseeded because their mass vanished.
fn m_step(data: &FeatureSet, resp: &[f64], k: usize, reg: f64) -> Result<(GmmModel, usize)> {
    let n = data.len();
    let dim = data.dim();

    let firsts: Vec<(Vec<f64>, Vec<f64>)> = data
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .zip(resp.par_chunks(CHUNK_ROWS * k))
        .map(|(xs, rs)| {
            let mut mass = vec![0.0; k];
            let mut sums = vec![0.0; k * dim];
            for (x, r) in xs.chunks_exact(dim).zip(rs.chunks_exact(k)) {
                for c in 0..k {
                    let w = r[c];
                    if w == 0.0 {
                        continue;
                    }
                    mass[c] += w;
                    for (s, &xv) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *s += w * xv;
                    }
                }
            }
            (mass, sums)
        })
        .collect();
    let mut mass = vec![0.0; k];
    let mut sums = vec![0.0; k * dim];
    for (m, s) in firsts {
        mass.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| sums[c * dim..(c + 1) * dim].iter().map(|s| s / mass[c]).collect())
        .collect();

    let tri = dim * (dim + 1) / 2;
    let seconds: Vec<Vec<f64>> = data
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .zip(resp.par_chunks(CHUNK_ROWS * k))
        .map(|(xs, rs)| {
            let mut acc = vec![0.0; k * tri];
            let mut d = vec![0.0; dim];
            for (x, r) in xs.chunks_exact(dim).zip(rs.chunks_exact(k)) {
                for c in 0..k {
                    let w = r[c];
                    if w == 0.0 {
                        continue;
                    }
                    for ((dv, &xv), &mv) in d.iter_mut().zip(x).zip(&means[c]) {
                        *dv = xv - mv;
                    }
                    let a = &mut acc[c * tri..(c + 1) * tri];
                    let mut t = 0;
                    for i in 0..dim {
                        let wdi = w * d[i];
                        for j in i..dim {
                            a[t] += wdi * d[j];
                            t += 1;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; k * tri];
    for s in seconds {
        acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }

    let collapse_mass = 1e-9 * n as f64;
    let collapsed: Vec<usize> = (0..k).filter(|&c| !(mass[c] > collapse_mass)).collect();

    let mut weights = Vec::with_capacity(k);
    let mut out_means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut fallback: Option<(Vec<usize>, SymMatrix)> = None;
    let mut used = 0;
    for c in 0..k {
        if collapsed.contains(&c) {
            let (order, global_cov) = match &fallback {
                Some(f) => f,
                None => {
                    let order = worst_explained(resp, n, k);
                    let gm = data.mean();
                    let gc = data.covariance(&gm, 0)?;
                    fallback.insert((order, gc))
                }
            };
            let pick = order[used.min(order.len() - 1)];
            used += 1;
            out_means.push(data.row(pick).to_vec());
            covs.push(global_cov.clone());
            weights.push(1.0 / k as f64);
            continue;
        }
        let a = &acc[c * tri..(c + 1) * tri];
        let mut full = vec![0.0; dim * dim];
        let mut t = 0;
        for i in 0..dim {
            for j in i..dim {
                let v = a[t] / mass[c];
                full[i * dim + j] = v;
                full[j * dim + i] = v;
                t += 1;
            }
        }
        covs.push(SymMatrix::new(Matrix::from_row_major(dim, dim, full)?)?);
        out_means.push(means[c].clone());
        weights.push(mass[c] / n as f64);
    }
    let model = GmmModel::from_covariances(&weights, out_means, &covs, reg)?;
    Ok((model, collapsed.len()))
}

/// Sample indices ordered by ascending max-responsibility (ties by index).
fn worst_explained(resp: &[f64], n: usize, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| (resp[i * k..(i + 1) * k].iter().copied().fold(0.0, f64::max), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_1d(mean: f64, n: usize, seed: u64) -> FeatureSet {
        let mut rng = seeded(seed);
        let v: Vec<f64> = (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect();
        FeatureSet::new(1, v, None).unwrap()
    }

    fn two_mode_1d() -> GmmModel {
        let e = |l: f64| EigenPair { values: vec![l], vectors: Matrix::identity(1) };
        GmmModel::from_eigen(&[0.5, 0.5], vec![vec![-10.0], vec![10.0]], vec![e(1.0), e(1.0)], 1e-6).unwrap()
    }

    #[test]
    fn feature_set_validation() {
        assert!(FeatureSet::new(2, vec![1.0, 2.0, 3.0], None).is_err());
        assert!(FeatureSet::new(1, vec![f64::INFINITY], None).is_err());
        assert!(FeatureSet::new(1, vec![1.0, 2.0], Some(vec![0])).is_err());
        let fs = FeatureSet::new(2, vec![1.0, 2.0, 3.0, 4.0], Some(vec![0, 1])).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn em_single_gaussian_1d() {
        let data = gaussian_1d(3.0, 10_000, 5);
        let (m, _) = fit_em(&data, &EmConfig::new(1)).unwrap();
        assert!((m.component(0).mean[0] - 3.0).abs() < 0.05);
        assert!((m.component(0).eigenvalues()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn em_rejects_too_few_samples() {
        let data = gaussian_1d(0.0, 2, 1);
        assert!(fit_em(&data, &EmConfig::new(3)).is_err());
    }

    #[test]
    fn em_recovers_separated_clusters() {
        let e = EigenPair { values: vec![1.0, 1.0], vectors: Matrix::identity(2) };
        let truth = GmmModel::from_eigen(
            &[0.5, 0.5],
            vec![vec![-10.0, 0.0], vec![10.0, 0.0]],
            vec![e.clone(), e],
            1e-6,
        )
        .unwrap();
        let data = truth.sample(4000, 11);
        let (m, report) = fit_em(&data, &EmConfig { seed: 2, ..EmConfig::new(2) }).unwrap();
        assert!(report.converged);
        let mut found: Vec<(f64, f64)> = m.components().iter().map(|c| (c.mean[0], c.weight)).collect();
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((found[0].0 + 10.0).abs() < 0.1 && (found[1].0 - 10.0).abs() < 0.1);
        assert!((found[0].1 - 0.5).abs() < 0.05);
    }

    #[test]
    fn map_picks_nearest_mode() {
        let m = two_mode_1d();
        assert_eq!(m.map_component(&[9.5]), 1);
        assert_eq!(m.map_component(&[-0.5]), 0);
        // Exact tie at the midpoint goes to the lower index.
        assert_eq!(m.map_component(&[0.0]), 0);
    }

    #[test]
    fn whiten_roundtrip_and_scaling() {
        let v = Matrix::identity(2);
        let e = EigenPair { values: vec![4.0, 1.0], vectors: v };
        let m = GmmModel::from_eigen(&[1.0], vec![vec![1.0, -2.0]], vec![e], 1e-6).unwrap();
        assert_eq!(m.whiten(0, &[1.0, -2.0]), vec![0.0, 0.0]);
        assert_eq!(m.unwhiten(0, &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(m.unwhiten(0, &[1.0, 1.0]), vec![3.0, -1.0]);
        let x = [0.3, 7.5];
        let back = m.unwhiten(0, &m.whiten(0, &x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_likelihood_standard_normal_mode() {
        let e = EigenPair { values: vec![1.0, 1.0], vectors: Matrix::identity(2) };
        let mu = vec![0.5, -0.5];
        let m = GmmModel::from_eigen(&[1.0], vec![mu.clone()], vec![e], 1e-12).unwrap();
        let data = FeatureSet::new(2, mu, None).unwrap();
        let ll = m.log_likelihood(&data).unwrap();
        assert!((ll - (1.0 / (2.0 * PI)).ln()).abs() < 1e-14);
    }

    #[test]
    fn sample_is_seeded() {
        let m = two_mode_1d();
        assert_eq!(m.sample(0, 1).len(), 0);
        assert_eq!(m.sample(50, 7), m.sample(50, 7));
        assert_ne!(m.sample(50, 7), m.sample(50, 8));
    }

    #[test]
    fn supervised_requires_two_per_class() {
        let data = FeatureSet::new(1, vec![0.0, 1.0, 5.0], Some(vec![0, 0, 1])).unwrap();
        let map: BTreeMap<u32, u32> = [(0, 0), (1, 1)].into();
        assert!(fit_supervised(&data, &map, 1e-6).is_err());
        let map: BTreeMap<u32, u32> = [(0, 0)].into();
        assert!(fit_supervised(&data, &map, 1e-6).is_err());
    }

    #[test]
    fn supervised_means_are_class_means() {
        let data = FeatureSet::new(1, vec![0.0, 2.0, 10.0, 14.0], Some(vec![0, 0, 1, 1])).unwrap();
        let map: BTreeMap<u32, u32> = [(0, 0), (1, 1)].into();
        let m = fit_supervised(&data, &map, 1e-6).unwrap();
        assert_eq!(m.component(0).mean, vec![1.0]);
        assert_eq!(m.component(1).mean, vec![12.0]);
        assert_eq!(m.weights(), vec![0.5, 0.5]);
    }
}
