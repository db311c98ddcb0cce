//! End-to-end coder: offline design, per-vector encode/decode, rate
//! measurement, and framing into model and stream files.

mod bytes;
pub mod featio;
pub mod format;

use rayon::prelude::*;

use crate::entropycoder::{flc_bits, flc_mode, flc_pack, flc_unpack, RangeDecoder, RangeEncoder, SymbolModel};
use crate::error::{invalid, AtcError, Result};
use crate::gmm::{fit_em, EmConfig, FeatureSet, FitReport, GmmModel};
use crate::pca::{fit_global_pca, select_m, PcaStage};
use crate::quantizer::{build_quantization_map, QuantizationMap, QuantizerBank};
use crate::rdtheory::MixtureSpectrum;

pub use format::{deserialize_model, serialize_model, EncodedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoderMode {
    Arithmetic = 0,
    Flc = 1,
}

impl CoderMode {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Arithmetic),
            1 => Some(Self::Flc),
            _ => None,
        }
    }
}

/// Full offline state: mixture, quantizer bank, one map per quality point,
/// optional PCA front end.
#[derive(Debug, Clone)]
pub struct CodecModel {
    gmm: GmmModel,
    bank: QuantizerBank,
    maps: Vec<QuantizationMap>,
    pca: Option<PcaStage>,
    mode_model: SymbolModel,
    model_id: [u8; 16],
}

impl PartialEq for CodecModel {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
    }
}

/// Everything the encoder decides for one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCode {
    pub component: usize,
    /// Whitened coefficients before quantization.
    pub z: Vec<f64>,
    /// Quantizer indices; 0 for coefficients with a single level.
    pub indices: Vec<u32>,
    /// Dequantized whitened coefficients.
    pub zhat: Vec<f64>,
    /// `−log2 π_ĉ − Σ_n log2 ℙ(J_n = j_n)` under exact interval probabilities.
    pub model_bits: f64,
}

impl CodecModel {
    /// Builds one quantization map per θ on top of a fitted mixture.
    pub fn new(gmm: GmmModel, bank: QuantizerBank, thetas: &[f64], pca: Option<PcaStage>) -> Result<Self> {
        if thetas.is_empty() {
            return invalid("at least one quality point is required");
        }
        let spec = MixtureSpectrum::from_model(&gmm);
        let maps = thetas
            .iter()
            .map(|&t| build_quantization_map(&spec, &bank, t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(gmm, bank, maps, pca)
    }

    pub(crate) fn from_parts(
        gmm: GmmModel,
        bank: QuantizerBank,
        maps: Vec<QuantizationMap>,
        pca: Option<PcaStage>,
    ) -> Result<Self> {
        if maps.len() > u16::MAX as usize + 1 {
            return invalid("too many quality points for a u16 index");
        }
        if let Some(p) = &pca {
            if p.m() != gmm.dim() {
                return invalid(format!("PCA output dim {} does not match mixture dim {}", p.m(), gmm.dim()));
            }
        }
        for m in &maps {
            if m.levels.len() != gmm.k() || m.levels.iter().any(|r| r.len() != gmm.dim()) {
                return invalid("quantization map shape must be K × N'");
            }
            if m.levels.iter().flatten().any(|&l| bank.quantizer(l as usize).is_none()) {
                return invalid("quantization map uses a level count missing from the bank");
            }
        }
        let mode_model = SymbolModel::from_probabilities(&gmm.weights())?;
        let mut model = Self { gmm, bank, maps, pca, mode_model, model_id: [0; 16] };
        model.model_id = format::body_hash(&format::serialize_body(&model));
        Ok(model)
    }

    /// Appends a quality point; earlier θ indices stay valid.
    pub fn with_theta(self, theta: f64) -> Result<Self> {
        let map = build_quantization_map(&self.spectrum(), &self.bank, theta)?;
        let mut maps = self.maps;
        maps.push(map);
        Self::from_parts(self.gmm, self.bank, maps, self.pca)
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn bank(&self) -> &QuantizerBank {
        &self.bank
    }

    pub fn maps(&self) -> &[QuantizationMap] {
        &self.maps
    }

    pub fn map(&self, theta_idx: usize) -> Result<&QuantizationMap> {
        self.maps
            .get(theta_idx)
            .ok_or_else(|| AtcError::InvalidInput(format!("θ index {theta_idx} out of range ({} quality points)", self.maps.len())))
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.maps.iter().map(|m| m.theta).collect()
    }

    pub fn pca(&self) -> Option<&PcaStage> {
        self.pca.as_ref()
    }

    pub fn mode_model(&self) -> &SymbolModel {
        &self.mode_model
    }

    /// First 16 bytes of the SHA-256 of the serialized model body.
    pub fn model_id(&self) -> [u8; 16] {
        self.model_id
    }

    pub fn model_id_hex(&self) -> String {
        self.model_id.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn k(&self) -> usize {
        self.gmm.k()
    }

    /// Dimension of the vectors accepted by the encoder.
    pub fn input_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.gmm.dim(), PcaStage::n)
    }

    /// `N'`, the dimension the mixture lives in.
    pub fn coded_dim(&self) -> usize {
        self.gmm.dim()
    }

    pub fn spectrum(&self) -> MixtureSpectrum {
        MixtureSpectrum::from_model(&self.gmm)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return invalid(format!("vector has {} entries, model expects {}", x.len(), self.input_dim()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("input vector has non-finite entries");
        }
        Ok(())
    }

    /// Mode decision, whitening and quantization without entropy coding.
    pub fn analyze(&self, theta_idx: usize, x: &[f64]) -> Result<VectorCode> {
        self.check_input(x)?;
        let map = self.map(theta_idx)?;
        let reduced;
        let x = match &self.pca {
            Some(p) => {
                reduced = p.reduce_vector(x);
                &reduced[..]
            }
            None => x,
        };
        let (component, z) = self.gmm.map_component_whitened(x);
        let row = map.row(component);
        let mut indices = Vec::with_capacity(row.len());
        let mut zhat = Vec::with_capacity(row.len());
        let mut model_bits = -self.gmm.component(component).weight.log2();
        for (&zn, &l) in z.iter().zip(row) {
            let l = l as usize;
            let q = self.bank.quantizer(l).expect("map levels validated against bank");
            let j = q.quantize(zn);
            if l > 1 {
                model_bits += self.bank.index_bits(l, j).expect("index in range");
            }
            indices.push(j as u32);
            zhat.push(q.centroids()[j]);
        }
        Ok(VectorCode { component, z, indices, zhat, model_bits })
    }

    /// Source-domain reconstruction from a mode and dequantized coefficients.
    pub fn synthesize(&self, component: usize, zhat: &[f64]) -> Vec<f64> {
        let xr = self.gmm.unwhiten(component, zhat);
        match &self.pca {
            Some(p) => p.lift_vector(&xr),
            None => xr,
        }
    }

    pub fn encode_vector(&self, theta_idx: usize, x: &[f64], mode: CoderMode) -> Result<Vec<u8>> {
        let code = self.analyze(theta_idx, x)?;
        self.pack(theta_idx, &code, mode)
    }

    pub(crate) fn pack(&self, theta_idx: usize, code: &VectorCode, mode: CoderMode) -> Result<Vec<u8>> {
        let row = self.map(theta_idx)?.row(code.component);
        match mode {
            CoderMode::Arithmetic => {
                let mut enc = RangeEncoder::new();
                enc.encode(code.component, &self.mode_model)?;
                for (&j, &l) in code.indices.iter().zip(row) {
                    if l > 1 {
                        enc.encode(j as usize, self.bank.symbol_model(l as usize).expect("validated"))?;
                    }
                }
                Ok(enc.finish())
            }
            CoderMode::Flc => flc_pack(code.component, self.k(), &code.indices, row),
        }
    }

    /// Mode and dequantized whitened coefficients carried by a segment.
    pub fn unpack(&self, theta_idx: usize, segment: &[u8], mode: CoderMode) -> Result<(usize, Vec<f64>)> {
        let map = self.map(theta_idx)?;
        let indices = match mode {
            CoderMode::Arithmetic => {
                let mut dec = RangeDecoder::new(segment)?;
                let c = dec.decode(&self.mode_model)?;
                let row = map.row(c);
                let mut idx = Vec::with_capacity(row.len());
                for &l in row {
                    idx.push(if l > 1 {
                        dec.decode(self.bank.symbol_model(l as usize).expect("validated"))? as u32
                    } else {
                        0
                    });
                }
                dec.finish()?;
                (c, idx)
            }
            CoderMode::Flc => {
                let c = flc_mode(segment, self.k())?;
                flc_unpack(segment, self.k(), map.row(c))?
            }
        };
        let (c, idx) = indices;
        let zhat = idx
            .iter()
            .zip(map.row(c))
            .map(|(&j, &l)| self.bank.quantizer(l as usize).expect("validated").dequantize(j as usize))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| AtcError::CorruptStream(e.to_string()))?;
        Ok((c, zhat))
    }

    pub fn decode_vector(&self, theta_idx: usize, segment: &[u8], mode: CoderMode) -> Result<Vec<f64>> {
        let (c, zhat) = self.unpack(theta_idx, segment, mode)?;
        Ok(self.synthesize(c, &zhat))
    }

    /// Analytic fixed-length size of the segment for mode `c`.
    pub fn flc_bits_for(&self, theta_idx: usize, c: usize) -> Result<u64> {
        Ok(flc_bits(self.map(theta_idx)?.row(c), self.k()))
    }
}

fn theta_index(theta_idx: usize) -> Result<u16> {
    u16::try_from(theta_idx).or_else(|_| invalid(format!("θ index {theta_idx} does not fit in u16")))
}

pub fn encode_set(model: &CodecModel, theta_idx: usize, data: &FeatureSet, mode: CoderMode) -> Result<EncodedStream> {
    model.map(theta_idx)?;
    if data.dim() != model.input_dim() && !data.is_empty() {
        return invalid(format!("data dim {} does not match model input dim {}", data.dim(), model.input_dim()));
    }
    let segments = (0..data.len())
        .into_par_iter()
        .map(|i| model.encode_vector(theta_idx, data.row(i), mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedStream { model_id: model.model_id(), theta_index: theta_index(theta_idx)?, mode, segments })
}

pub fn decode_set(model: &CodecModel, stream: &EncodedStream) -> Result<FeatureSet> {
    if stream.model_id != model.model_id() {
        return Err(AtcError::ModelMismatch {
            stream: stream.model_id.iter().map(|b| format!("{b:02x}")).collect(),
            model: model.model_id_hex(),
        });
    }
    let t = stream.theta_index as usize;
    model.map(t).map_err(|_| AtcError::CorruptStream(format!("θ index {t} not present in model")))?;
    let rows = stream
        .segments
        .par_iter()
        .map(|s| model.decode_vector(t, s, stream.mode))
        .collect::<Result<Vec<_>>>()?;
    let dim = model.input_dim();
    FeatureSet::new(dim, rows.into_iter().flatten().collect(), None)
}

/// Per-vector averages of the three rate measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMeasurement {
    /// Ideal code length under exact interval probabilities.
    pub model_bits: f64,
    /// Range-coded segment length × 8.
    pub actual_bits: f64,
    /// Analytic fixed-length size.
    pub flc_bits: f64,
}

pub fn measure_rate(model: &CodecModel, theta_idx: usize, data: &FeatureSet) -> Result<RateMeasurement> {
    if data.is_empty() {
        return invalid("rate measurement needs at least one vector");
    }
    let per: Vec<(f64, f64, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let code = model.analyze(theta_idx, data.row(i))?;
            let seg = model.pack(theta_idx, &code, CoderMode::Arithmetic)?;
            let flc = model.flc_bits_for(theta_idx, code.component)?;
            Ok((code.model_bits, 8.0 * seg.len() as f64, flc as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let (a, b, c) = per.iter().fold((0.0, 0.0, 0.0), |s, p| (s.0 + p.0, s.1 + p.1, s.2 + p.2));
    Ok(RateMeasurement { model_bits: a / n, actual_bits: b / n, flc_bits: c / n })
}

/// Fits the mixture by EM, designs the bank, and builds the maps.
pub fn design(
    data: &FeatureSet,
    em: &EmConfig,
    ladder: &[usize],
    thetas: &[f64],
) -> Result<(CodecModel, FitReport)> {
    if thetas.is_empty() {
        return invalid("at least one quality point is required");
    }
    let (gmm, report) = fit_em(data, em)?;
    let bank = QuantizerBank::design(ladder)?;
    Ok((CodecModel::new(gmm, bank, thetas, None)?, report))
}

/// Reduced-complexity design: global PCA, keep `M` directions by the
/// explained-variance rule, then fit the mixture on the projections.
pub fn design_pca(
    data: &FeatureSet,
    gamma: f64,
    em: &EmConfig,
    ladder: &[usize],
    thetas: &[f64],
) -> Result<(CodecModel, FitReport)> {
    if thetas.is_empty() {
        return invalid("at least one quality point is required");
    }
    let global = fit_global_pca(data)?;
    let m = select_m(&global.eigen.values, gamma)?;
    let stage = global.stage(m)?;
    let reduced = stage.reduce(data)?;
    let (gmm, report) = fit_em(&reduced, em)?;
    let bank = QuantizerBank::design(ladder)?;
    Ok((CodecModel::new(gmm, bank, thetas, Some(stage))?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{EigenPair, Matrix};
    use crate::quantizer::DEFAULT_LADDER;

    fn toy(weights: &[f64]) -> CodecModel {
        let k = weights.len();
        let means = (0..k).map(|c| vec![10.0 * c as f64, -3.0 * c as f64]).collect();
        let eigens = (0..k)
            .map(|c| EigenPair { values: vec![4.0 + c as f64, 1.0], vectors: Matrix::identity(2) })
            .collect();
        let gmm = GmmModel::from_eigen(weights, means, eigens, 1e-6).unwrap();
        let bank = QuantizerBank::design(&DEFAULT_LADDER).unwrap();
        CodecModel::new(gmm, bank, &[0.01, 0.5, 100.0], None).unwrap()
    }

    #[test]
    fn zero_rate_point_sends_only_the_mode() {
        let m = toy(&[1.0]);
        assert!(m.map(2).unwrap().levels[0].iter().all(|&l| l == 1));
        let seg = m.encode_vector(2, &[3.0, 1.0], CoderMode::Arithmetic).unwrap();
        assert_eq!(seg.len(), 4);
        assert_eq!(m.decode_vector(2, &seg, CoderMode::Arithmetic).unwrap(), vec![0.0, 0.0]);
        assert!(m.encode_vector(2, &[3.0, f64::NAN], CoderMode::Arithmetic).is_err());
        assert!(m.encode_vector(2, &[3.0], CoderMode::Arithmetic).is_err());
        assert!(m.encode_vector(3, &[3.0, 1.0], CoderMode::Arithmetic).is_err());
    }

    #[test]
    fn two_mode_zero_rate_costs_one_bit() {
        let m = toy(&[0.5, 0.5]);
        let data = FeatureSet::from_rows(2, &[vec![0.0, 0.0], vec![10.0, -3.0], vec![9.0, -2.0]]).unwrap();
        let r = measure_rate(&m, 2, &data).unwrap();
        assert_eq!(r.model_bits, 1.0);
        assert_eq!(r.flc_bits, 1.0);
    }

    #[test]
    fn both_coders_agree_on_reconstruction() {
        let m = toy(&[0.3, 0.7]);
        for x in [[0.3, -0.2], [11.0, -4.0], [5.2, 7.7]] {
            for t in 0..3 {
                let a = m.encode_vector(t, &x, CoderMode::Arithmetic).unwrap();
                let f = m.encode_vector(t, &x, CoderMode::Flc).unwrap();
                let xa = m.decode_vector(t, &a, CoderMode::Arithmetic).unwrap();
                let xf = m.decode_vector(t, &f, CoderMode::Flc).unwrap();
                assert_eq!(xa, xf);
                let code = m.analyze(t, &x).unwrap();
                assert_eq!(xa, m.synthesize(code.component, &code.zhat));
            }
        }
    }

    #[test]
    fn model_id_tracks_parameters() {
        let a = toy(&[0.5, 0.5]);
        let b = toy(&[0.5, 0.5]);
        assert_eq!(a.model_id(), b.model_id());
        let c = toy(&[0.4, 0.6]);
        assert_ne!(a.model_id(), c.model_id());
        let d = a.clone().with_theta(2.0).unwrap();
        assert_ne!(a.model_id(), d.model_id());
        assert_eq!(d.thetas(), vec![0.01, 0.5, 100.0, 2.0]);
    }

    #[test]
    fn set_coding_checks_model_identity() {
        let a = toy(&[0.5, 0.5]);
        let c = toy(&[0.4, 0.6]);
        let data = FeatureSet::from_rows(2, &[vec![1.0, 2.0], vec![9.0, -1.0]]).unwrap();
        let s = encode_set(&a, 1, &data, CoderMode::Arithmetic).unwrap();
        assert!(matches!(decode_set(&c, &s), Err(AtcError::ModelMismatch { .. })));
        let back = decode_set(&a, &s).unwrap();
        assert_eq!(back.len(), 2);
        let empty = encode_set(&a, 1, &FeatureSet::empty(2).unwrap(), CoderMode::Flc).unwrap();
        assert!(empty.segments.is_empty());
    }
}
