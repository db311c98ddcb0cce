//! ATCM model files and ATCS stream files.
//!
//! Model file:
//!
//! ```text
//! "ATCM" | u16 version | section* | 16-byte hash
//! section = u8 tag | u64 body length | body
//! ```
//!
//! | tag | body |
//! |-----|------|
//! | 1 GMM  | u32 N, u32 K, f64 reg, then per component: f64 weight, f64 eigenvalue floor, N mean, N eigenvalues, N×N eigenvectors (row-major, column n is eigenvector n) |
//! | 2 BANK | u32 count, then per quantizer: u32 L, f64 mse, L centroids, L−1 thresholds |
//! | 3 MAPS | u32 count, then per quality point: f64 θ, u32 K, u32 N', K×N' u32 level counts |
//! | 4 PCA  | u32 N, u32 M, N mean, N spectrum, N×M basis (row-major) |
//!
//! Sections appear in tag order; PCA is optional. The hash is the first 16
//! bytes of SHA-256 over everything before it and doubles as the model id.
//!
//! Stream file:
//!
//! ```text
//! "ATCS" | u16 version | 16-byte model id | u16 θ index | u8 coder mode
//! | u64 count | (u32 length | segment)*
//! ```

use sha2::{Digest, Sha256};

use super::bytes::{Reader, Writer};
use super::{CodecModel, CoderMode};
use crate::error::{AtcError, Result};
use crate::gmm::GmmModel;
use crate::linalg::{EigenPair, Matrix};
use crate::pca::PcaStage;
use crate::quantizer::{build_quantization_map, LloydMaxQuantizer, QuantizationMap, QuantizerBank};
use crate::rdtheory::MixtureSpectrum;

pub const MODEL_MAGIC: &[u8; 4] = b"ATCM";
pub const MODEL_VERSION: u16 = 1;
pub const STREAM_MAGIC: &[u8; 4] = b"ATCS";
pub const STREAM_VERSION: u16 = 1;

const TAG_GMM: u8 = 1;
const TAG_BANK: u8 = 2;
const TAG_MAPS: u8 = 3;
const TAG_PCA: u8 = 4;

/// Bytes of framing around the parameter payload: magic, version, section
/// headers and the trailing hash.
pub fn framing_bytes(has_pca: bool) -> usize {
    4 + 2 + 16 + 9 * (3 + has_pca as usize)
}

fn section(w: &mut Writer, tag: u8, body: Writer) {
    w.u8(tag);
    w.u64(body.buf.len() as u64);
    w.bytes(&body.buf);
}

fn gmm_body(g: &GmmModel) -> Writer {
    let mut w = Writer::default();
    w.u32(g.dim() as u32);
    w.u32(g.k() as u32);
    w.f64(g.reg());
    for c in g.components() {
        w.f64(c.weight);
        w.f64(c.eig_floor);
        w.f64s(&c.mean);
        w.f64s(&c.eigen.values);
        w.f64s(c.eigen.vectors.as_slice());
    }
    w
}

fn bank_body(b: &QuantizerBank) -> Writer {
    let mut w = Writer::default();
    w.u32(b.quantizers().len() as u32);
    for q in b.quantizers() {
        w.u32(q.levels() as u32);
        w.f64(q.mse());
        w.f64s(q.centroids());
        w.f64s(q.thresholds());
    }
    w
}

fn maps_body(maps: &[QuantizationMap]) -> Writer {
    let mut w = Writer::default();
    w.u32(maps.len() as u32);
    for m in maps {
        w.f64(m.theta);
        w.u32(m.levels.len() as u32);
        w.u32(m.levels.first().map_or(0, Vec::len) as u32);
        m.levels.iter().flatten().for_each(|&l| w.u32(l));
    }
    w
}

fn pca_body(p: &PcaStage) -> Writer {
    let mut w = Writer::default();
    w.u32(p.n() as u32);
    w.u32(p.m() as u32);
    w.f64s(p.mean());
    w.f64s(p.spectrum());
    w.f64s(p.basis().as_slice());
    w
}

pub(crate) fn serialize_body(model: &CodecModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    section(&mut w, TAG_GMM, gmm_body(&model.gmm));
    section(&mut w, TAG_BANK, bank_body(&model.bank));
    section(&mut w, TAG_MAPS, maps_body(&model.maps));
    if let Some(p) = &model.pca {
        section(&mut w, TAG_PCA, pca_body(p));
    }
    w.buf
}

pub(crate) fn body_hash(body: &[u8]) -> [u8; 16] {
    let digest = Sha256::digest(body);
    digest[..16].try_into().expect("SHA-256 is 32 bytes")
}

pub fn serialize_model(model: &CodecModel) -> Vec<u8> {
    let mut out = serialize_body(model);
    out.extend_from_slice(&model.model_id);
    out
}

fn corrupt(msg: String) -> AtcError {
    AtcError::CorruptModel(msg)
}

fn dim(v: u32, what: &str) -> Result<usize> {
    if v == 0 {
        return Err(corrupt(format!("{what} must be positive")));
    }
    Ok(v as usize)
}

fn read_gmm(r: &mut Reader) -> Result<GmmModel> {
    let n = dim(r.u32()?, "mixture dimension")?;
    let k = dim(r.u32()?, "component count")?;
    let reg = r.f64()?;
    let per = n
        .checked_mul(n)
        .and_then(|nn| nn.checked_add(2 * n + 2))
        .and_then(|p| p.checked_mul(8 * k))
        .ok_or_else(|| corrupt("GMM section size overflows".into()))?;
    if r.remaining() != per {
        return Err(corrupt(format!("GMM section holds {} parameter bytes, expected {per}", r.remaining())));
    }
    let mut weights = Vec::with_capacity(k);
    let mut floors = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut eigens = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(r.f64()?);
        floors.push(r.f64()?);
        means.push(r.f64s(n)?);
        let values = r.f64s(n)?;
        let vectors = Matrix::from_row_major(n, n, r.f64s(n * n)?)?;
        eigens.push(EigenPair { values, vectors });
    }
    let g = GmmModel::from_stored(&weights, means, eigens, reg).map_err(|e| corrupt(e.to_string()))?;
    let stored_ok = g.components().iter().zip(&floors).all(|(c, f)| c.eig_floor == *f)
        && g.components().iter().zip(&weights).all(|(c, w)| c.weight == *w);
    if !stored_ok {
        return Err(corrupt("stored GMM parameters are not in canonical form".into()));
    }
    Ok(g)
}

fn read_bank(r: &mut Reader) -> Result<QuantizerBank> {
    let count = dim(r.u32()?, "quantizer count")?;
    let mut qs = Vec::with_capacity(count);
    for _ in 0..count {
        let l = dim(r.u32()?, "level count")?;
        let mse = r.f64()?;
        let centroids = r.f64s(l)?;
        let thresholds = r.f64s(l - 1)?;
        qs.push(LloydMaxQuantizer::from_parts(centroids, thresholds, mse).map_err(|e| corrupt(e.to_string()))?);
    }
    QuantizerBank::from_quantizers(qs).map_err(|e| corrupt(e.to_string()))
}

fn read_maps(r: &mut Reader, gmm: &GmmModel, bank: &QuantizerBank) -> Result<Vec<QuantizationMap>> {
    let count = r.u32()? as usize;
    let spec = MixtureSpectrum::from_model(gmm);
    let mut maps = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let theta = r.f64()?;
        let k = r.u32()? as usize;
        let n = r.u32()? as usize;
        if k != gmm.k() || n != gmm.dim() {
            return Err(corrupt(format!("map is {k}×{n}, mixture is {}×{}", gmm.k(), gmm.dim())));
        }
        let mut levels = Vec::with_capacity(k);
        for _ in 0..k {
            levels.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        // Maps are a function of (θ, spectrum, bank); a stored map that
        // disagrees with its own θ cannot be decoded consistently.
        let rebuilt = build_quantization_map(&spec, bank, theta).map_err(|e| corrupt(e.to_string()))?;
        if rebuilt.levels != levels {
            return Err(corrupt(format!("map for θ = {theta} does not match the stored spectrum and bank")));
        }
        maps.push(rebuilt);
    }
    Ok(maps)
}

fn read_pca(r: &mut Reader) -> Result<PcaStage> {
    let n = dim(r.u32()?, "PCA input dimension")?;
    let m = dim(r.u32()?, "PCA output dimension")?;
    if m > n {
        return Err(corrupt(format!("PCA keeps M = {m} > N = {n}")));
    }
    let mean = r.f64s(n)?;
    let spectrum = r.f64s(n)?;
    let basis = Matrix::from_row_major(n, m, r.f64s(n * m)?)?;
    PcaStage::new(mean, basis, spectrum).map_err(|e| corrupt(e.to_string()))
}

pub fn deserialize_model(bytes: &[u8]) -> Result<CodecModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(AtcError::Format("not an ATCM model file".into()));
    }
    if bytes.len() < 6 + 16 {
        return Err(corrupt("model file truncated".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(AtcError::UnsupportedVersion { found: version, expected: MODEL_VERSION });
    }
    let (body, hash) = bytes.split_at(bytes.len() - 16);
    if body_hash(body) != hash {
        return Err(corrupt("content hash mismatch".into()));
    }
    let mut r = Reader::new(&body[6..], corrupt);
    let mut sections: Vec<(u8, &[u8])> = Vec::new();
    while r.remaining() > 0 {
        let tag = r.u8()?;
        let len = usize::try_from(r.u64()?).map_err(|_| corrupt("section length overflows".into()))?;
        sections.push((tag, r.take(len)?));
    }
    let tags: Vec<u8> = sections.iter().map(|s| s.0).collect();
    if tags != [TAG_GMM, TAG_BANK, TAG_MAPS] && tags != [TAG_GMM, TAG_BANK, TAG_MAPS, TAG_PCA] {
        return Err(corrupt(format!("unexpected section layout {tags:?}")));
    }
    let parse = |i: usize| Reader::new(sections[i].1, corrupt);
    let mut r = parse(0);
    let gmm = read_gmm(&mut r)?;
    r.expect_end("GMM section")?;
    let mut r = parse(1);
    let bank = read_bank(&mut r)?;
    r.expect_end("bank section")?;
    let mut r = parse(2);
    let maps = read_maps(&mut r, &gmm, &bank)?;
    r.expect_end("map section")?;
    let pca = if sections.len() == 4 {
        let mut r = parse(3);
        let p = read_pca(&mut r)?;
        r.expect_end("PCA section")?;
        Some(p)
    } else {
        None
    };
    let model = CodecModel::from_parts(gmm, bank, maps, pca).map_err(|e| corrupt(e.to_string()))?;
    if model.model_id != hash {
        return Err(corrupt("model does not re-serialize to the stored bytes".into()));
    }
    Ok(model)
}

/// A batch of independently decodable per-vector segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStream {
    pub model_id: [u8; 16],
    pub theta_index: u16,
    pub mode: CoderMode,
    pub segments: Vec<Vec<u8>>,
}

impl EncodedStream {
    pub const HEADER_BYTES: usize = 4 + 2 + 16 + 2 + 1 + 8;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(STREAM_MAGIC);
        w.u16(STREAM_VERSION);
        w.bytes(&self.model_id);
        w.u16(self.theta_index);
        w.u8(self.mode as u8);
        w.u64(self.segments.len() as u64);
        for s in &self.segments {
            w.u32(s.len() as u32);
            w.bytes(s);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, AtcError::CorruptStream);
        if bytes.len() < 4 || r.take(4)? != STREAM_MAGIC {
            return Err(AtcError::Format("not an ATCS stream file".into()));
        }
        let version = r.u16()?;
        if version != STREAM_VERSION {
            return Err(AtcError::UnsupportedVersion { found: version, expected: STREAM_VERSION });
        }
        let model_id: [u8; 16] = r.take(16)?.try_into().expect("16 bytes");
        let theta_index = r.u16()?;
        let mode_code = r.u8()?;
        let mode = CoderMode::from_code(mode_code)
            .ok_or_else(|| AtcError::CorruptStream(format!("unknown coder mode {mode_code}")))?;
        let count = r.u64()?;
        // Each segment costs at least its 4-byte length prefix.
        if count > (r.remaining() / 4) as u64 {
            return Err(AtcError::CorruptStream(format!("header claims {count} segments, stream too short")));
        }
        let mut segments = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            segments.push(r.take(len)?.to_vec());
        }
        r.expect_end("stream")?;
        Ok(Self { model_id, theta_index, mode, segments })
    }

    /// Total bytes of segment payload, excluding header and length prefixes.
    pub fn payload_bytes(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }
}
