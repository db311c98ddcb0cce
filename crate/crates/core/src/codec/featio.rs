//! ATCF feature files.
//!
//! ```text
//! "ATCF" | u16 version | u32 N | u64 count | u8 dtype | u8 has_labels
//! | count·N values, row-major | count u32 labels (if has_labels)
//! ```
//!
//! dtype 0 is `f32`, dtype 1 is `f64`. All fields little-endian.

use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::error::{AtcError, Result};
use crate::gmm::FeatureSet;

pub const FEATURE_MAGIC: &[u8; 4] = b"ATCF";
pub const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serialises `data`. With [`Dtype::F32`] values are rounded to single
/// precision.
pub fn write_features(data: &FeatureSet, dtype: Dtype) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(FEATURE_MAGIC);
    w.u16(FEATURE_VERSION);
    w.u32(data.dim() as u32);
    w.u64(data.len() as u64);
    w.u8(dtype as u8);
    w.u8(data.labels().is_some() as u8);
    for &v in data.as_slice() {
        match dtype {
            Dtype::F32 => w.bytes(&(v as f32).to_le_bytes()),
            Dtype::F64 => w.f64(v),
        }
    }
    if let Some(labels) = data.labels() {
        labels.iter().for_each(|&l| w.u32(l));
    }
    w.buf
}

pub fn read_features(bytes: &[u8]) -> Result<(FeatureSet, Dtype)> {
    let mut r = Reader::new(bytes, AtcError::Format);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(AtcError::Format("not an ATCF feature file".into()));
    }
    let version = r.u16()?;
    if version != FEATURE_VERSION {
        return Err(AtcError::UnsupportedVersion { found: version, expected: FEATURE_VERSION });
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let dtype = match r.u8()? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        d => return Err(AtcError::Format(format!("unknown dtype code {d}"))),
    };
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(AtcError::Format(format!("has_labels flag must be 0 or 1, got {f}"))),
    };
    let values = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .ok_or_else(|| AtcError::Format("feature payload size overflows".into()))?;
    let expected = values
        .checked_mul(dtype.width())
        .and_then(|p| p.checked_add(if has_labels { count as usize * 4 } else { 0 }))
        .ok_or_else(|| AtcError::Format("feature payload size overflows".into()))?;
    if r.remaining() != expected {
        return Err(AtcError::Format(format!("payload is {} bytes, header implies {expected}", r.remaining())));
    }
    let mut data = Vec::with_capacity(values);
    for _ in 0..values {
        data.push(match dtype {
            Dtype::F32 => r.f32()? as f64,
            Dtype::F64 => r.f64()?,
        });
    }
    let labels = if has_labels { Some((0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?) } else { None };
    let set = FeatureSet::new(dim, data, labels).map_err(|e| AtcError::Format(e.to_string()))?;
    Ok((set, dtype))
}

pub fn save_features(path: impl AsRef<Path>, data: &FeatureSet, dtype: Dtype) -> Result<()> {
    std::fs::write(path, write_features(data, dtype))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    Ok(read_features(&std::fs::read(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_layout() {
        let empty = FeatureSet::empty(3).unwrap();
        let b = write_features(&empty, Dtype::F32);
        assert_eq!(b.len(), 4 + 2 + 4 + 8 + 1 + 1);
        let (back, dt) = read_features(&b).unwrap();
        assert_eq!(dt, Dtype::F32);
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn labelled_round_trip() {
        let set = FeatureSet::new(2, vec![0.5, -1.25, 3.0, 4.0], Some(vec![7, 9])).unwrap();
        for dt in [Dtype::F32, Dtype::F64] {
            let (back, _) = read_features(&write_features(&set, dt)).unwrap();
            assert_eq!(back, set);
        }
    }

    #[test]
    fn rejects_bad_headers() {
        let set = FeatureSet::new(1, vec![1.0], None).unwrap();
        let mut b = write_features(&set, Dtype::F32);
        assert!(matches!(read_features(&b[..b.len() - 1]), Err(AtcError::Format(_))));
        b[4] = 9;
        assert!(matches!(read_features(&b), Err(AtcError::UnsupportedVersion { found: 9, .. })));
        b[0] = b'X';
        assert!(matches!(read_features(&b), Err(AtcError::Format(_))));
    }
}
