//! Global PCA front end for the reduced-complexity variant: project onto the
//! leading `M` principal directions, fit the mixture there, and compose the
//! two linear maps into one whitening operator per component.

use crate::error::{invalid, Result};
use crate::gmm::{FeatureSet, GmmModel};
use crate::linalg::{sym_eig, EigenPair, Matrix};

/// Mean and full eigendecomposition of the unbiased global covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPca {
    pub mean: Vec<f64>,
    pub eigen: EigenPair,
}

pub fn fit_global_pca(data: &FeatureSet) -> Result<GlobalPca> {
    if data.len() < 2 {
        return invalid(format!("global PCA needs at least 2 samples, got {}", data.len()));
    }
    let mean = data.mean();
    let cov = data.covariance(&mean, 1)?;
    Ok(GlobalPca { mean, eigen: sym_eig(&cov)? })
}

impl GlobalPca {
    pub fn stage(&self, m: usize) -> Result<PcaStage> {
        let n = self.mean.len();
        if m == 0 || m > n {
            return invalid(format!("M = {m} outside 1..={n}"));
        }
        let mut basis = Matrix::zeros(n, m);
        for r in 0..n {
            for c in 0..m {
                basis.set(r, c, self.eigen.vectors.get(r, c));
            }
        }
        PcaStage::new(self.mean.clone(), basis, self.eigen.values.clone())
    }
}

/// Smallest `m` whose leading eigenvalues carry a fraction `γ` of the total.
/// `γ = 1` keeps every strictly positive eigenvalue.
pub fn select_m(lambdas: &[f64], gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return invalid(format!("γ must lie in (0, 1], got {gamma}"));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return invalid("eigenvalues must be finite and non-negative");
    }
    if lambdas.windows(2).any(|w| w[0] < w[1]) {
        return invalid("eigenvalues must be sorted descending");
    }
    let total: f64 = lambdas.iter().sum();
    if !(total > 0.0) {
        return invalid("spectrum is identically zero");
    }
    if gamma >= 1.0 {
        return Ok(lambdas.iter().filter(|&&l| l > 0.0).count());
    }
    let mut acc = 0.0;
    for (i, &l) in lambdas.iter().enumerate() {
        acc += l;
        if acc / total >= gamma {
            return Ok(i + 1);
        }
    }
    Ok(lambdas.iter().filter(|&&l| l > 0.0).count())
}

/// `x̄ = Vᵀ(x − μ)` with `V` the leading `M` eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaStage {
    mean: Vec<f64>,
    basis: Matrix,
    spectrum: Vec<f64>,
}

impl PcaStage {
    pub fn new(mean: Vec<f64>, basis: Matrix, spectrum: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if basis.rows() != n || basis.cols() == 0 || basis.cols() > n || spectrum.len() != n {
            return invalid("PCA stage shapes disagree");
        }
        if mean.iter().chain(basis.as_slice()).chain(&spectrum).any(|v| !v.is_finite()) {
            return invalid("PCA stage parameters must be finite");
        }
        if spectrum.iter().any(|&l| l < 0.0) || spectrum.windows(2).any(|w| w[0] < w[1]) {
            return invalid("PCA spectrum must be non-negative and descending");
        }
        if basis.orthonormality_error() > 1e-8 {
            return invalid("PCA basis columns are not orthonormal");
        }
        Ok(Self { mean, basis, spectrum })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn m(&self) -> usize {
        self.basis.cols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `N × M`
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `Σ_{n>M} λ_n`, the variance the projection removes.
    pub fn discarded_energy(&self) -> f64 {
        self.spectrum[self.m()..].iter().sum()
    }

    pub fn reduce_vector(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.basis.tr_mul_vec(&d)
    }

    pub fn lift_vector(&self, xbar: &[f64]) -> Vec<f64> {
        let mut x = self.basis.mul_vec(xbar);
        x.iter_mut().zip(&self.mean).for_each(|(a, m)| *a += m);
        x
    }

    pub fn reduce(&self, data: &FeatureSet) -> Result<FeatureSet> {
        if data.dim() != self.n() {
            return invalid(format!("data dim {} does not match PCA input dim {}", data.dim(), self.n()));
        }
        let mut out = Vec::with_capacity(data.len() * self.m());
        for x in data.rows() {
            out.extend(self.reduce_vector(x));
        }
        FeatureSet::new(self.m(), out, data.labels().map(<[u32]>::to_vec))
    }

    pub fn lift(&self, data: &FeatureSet) -> Result<FeatureSet> {
        if data.dim() != self.m() {
            return invalid(format!("data dim {} does not match PCA output dim {}", data.dim(), self.m()));
        }
        let mut out = Vec::with_capacity(data.len() * self.n());
        for x in data.rows() {
            out.extend(self.lift_vector(x));
        }
        FeatureSet::new(self.n(), out, data.labels().map(<[u32]>::to_vec))
    }
}

/// Whitening in the source domain that folds the projection in:
/// `z = T (x − μ̃)` with `T = Λ̄^{-1/2} Ūᵀ Vᵀ` and `μ̃ = μ + V μ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedTransform {
    pub mean: Vec<f64>,
    /// `M × N`
    pub op: Matrix,
}

impl ComposedTransform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.op.mul_vec(&d)
    }
}

pub fn compose_reduced_transforms(stage: &PcaStage, reduced: &GmmModel) -> Result<Vec<ComposedTransform>> {
    if reduced.dim() != stage.m() {
        return invalid(format!("reduced GMM dim {} does not match M = {}", reduced.dim(), stage.m()));
    }
    let vt = stage.basis().transpose();
    Ok(reduced
        .components()
        .iter()
        .map(|c| {
            let mut ut = c.eigen.vectors.transpose();
            for (r, l) in c.eigenvalues().iter().enumerate() {
                let s = 1.0 / l.sqrt();
                for col in 0..ut.cols() {
                    ut.set(r, col, ut.get(r, col) * s);
                }
            }
            ComposedTransform { mean: stage.lift_vector(&c.mean), op: ut.mul(&vt) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamVariant {
    Full,
    Pca,
}

/// Parameter counts as used for the storage comparison: `N²K + NK` for the
/// full mixture, `NM + N + (M+1)KM` with the PCA front end.
pub fn param_count(n: u64, m: u64, k: u64, variant: ParamVariant) -> u64 {
    match variant {
        ParamVariant::Full => n * n * k + n * k,
        ParamVariant::Pca => n * m + n + (m + 1) * k * m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_m_examples() {
        assert_eq!(select_m(&[1.0; 100], 0.99).unwrap(), 99);
        assert_eq!(select_m(&[9.0, 1.0], 0.9).unwrap(), 1);
        assert_eq!(select_m(&[9.0, 1.0], 0.5).unwrap(), 1);
        assert_eq!(select_m(&[3.0, 2.0, 0.0], 1.0).unwrap(), 2);
        assert!(select_m(&[0.0, 0.0], 0.5).is_err());
        assert!(select_m(&[1.0], 0.0).is_err());
        assert!(select_m(&[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn param_count_formulas() {
        assert_eq!(param_count(2048, 2048, 20, ParamVariant::Full), 83_927_040);
        assert_eq!(param_count(2048, 1330, 20, ParamVariant::Pca), 38_130_488);
        assert_eq!(param_count(1, 1, 1, ParamVariant::Full), 2);
        assert_eq!(param_count(1, 1, 1, ParamVariant::Pca), 4);
    }

    #[test]
    fn planar_data_has_null_directions() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let (a, b) = ((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos());
                vec![a, b, a + b, 2.0 * a - b, 0.5 * b]
            })
            .collect();
        let pca = fit_global_pca(&FeatureSet::from_rows(5, &rows).unwrap()).unwrap();
        assert!(pca.eigen.values[1] > 1e-3);
        assert!(pca.eigen.values[2..].iter().all(|&l| l < 1e-12));
        assert!(fit_global_pca(&FeatureSet::from_rows(5, &rows[..1]).unwrap()).is_err());
    }

    #[test]
    fn full_basis_round_trips() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| (0..4).map(|j| ((i * 4 + j) as f64).sin()).collect()).collect();
        let data = FeatureSet::from_rows(4, &rows).unwrap();
        let stage = fit_global_pca(&data).unwrap().stage(4).unwrap();
        let back = stage.lift(&stage.reduce(&data).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(data.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(stage.reduce_vector(stage.mean()).iter().all(|v| v.abs() < 1e-15));
        assert_eq!(stage.discarded_energy(), 0.0);
    }
}
