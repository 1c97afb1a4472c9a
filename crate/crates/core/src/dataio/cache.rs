//! Little-endian binary envelopes.
//!
//! ```text
//! magic[4]  version:u32  count:u32  entry*
//! DTSE entry:  id_len:u16 id[id_len] n:u32 d:u32 f32[n*d]   (row-major)
//! DTSC entry:  id_len:u16 id[id_len] m:u32 f32[m]           (m = n - 1)
//! DTSH body:   d:u32 trained:u8 f64[d*d] f64[d]             (no count field)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_bytes, write_file, DataError};
use crate::ncum::ProjectionHead;
use crate::scoring::CoherenceSeries;
use crate::types::EmbeddingMatrix;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"DTSE";
pub const COHERENCE_MAGIC: [u8; 4] = *b"DTSC";
pub const HEAD_MAGIC: [u8; 4] = *b"DTSH";
pub const CACHE_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, offset: 0 }
    }

    fn take(&mut self, needed: usize) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.offset;
        if needed > available {
            return Err(DataError::TruncatedFile {
                offset: self.offset,
                needed,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + needed];
        self.offset += needed;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// `count` values of `width` bytes, with the byte total checked before
    /// anything is allocated.
    fn floats(&mut self, count: usize, width: usize) -> Result<Vec<f64>, DataError> {
        let start = self.offset;
        let needed = count.checked_mul(width).ok_or(DataError::TruncatedFile {
            offset: start,
            needed: usize::MAX,
            available: self.bytes.len() - start,
        })?;
        let raw = self.take(needed)?;
        raw.chunks_exact(width)
            .enumerate()
            .map(|(k, c)| {
                let v = match width {
                    4 => f64::from(f32::from_le_bytes(c.try_into().unwrap())),
                    _ => f64::from_le_bytes(c.try_into().unwrap()),
                };
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(DataError::NonFiniteValue {
                        offset: start + k * width,
                    })
                }
            })
            .collect()
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<(), DataError> {
        let found = self.take(4.min(self.bytes.len()))?;
        if found != magic {
            return Err(DataError::BadMagic {
                expected: magic,
                found: found.to_vec(),
            });
        }
        let version = self.u32()?;
        if version != CACHE_VERSION {
            return Err(DataError::VersionUnsupported(version));
        }
        Ok(())
    }

    fn id(&mut self) -> Result<(String, usize), DataError> {
        let at = self.offset;
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| DataError::BadUtf8 { offset: at + 2 })?
            .to_string();
        Ok((id, at))
    }

    fn finish(self) -> Result<(), DataError> {
        let count = self.bytes.len() - self.offset;
        if count > 0 {
            return Err(DataError::TrailingBytes {
                offset: self.offset,
                count,
            });
        }
        Ok(())
    }
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4]) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
}

fn put_id(out: &mut Vec<u8>, id: &str) -> Result<(), DataError> {
    let len = u16::try_from(id.len())
        .map_err(|_| DataError::Unrepresentable(format!("id longer than {} bytes", u16::MAX)))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), DataError> {
    let v = u32::try_from(v).map_err(|_| DataError::Unrepresentable(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Values are narrowed to f32.
pub fn encode_embedding_cache(entries: &BTreeMap<String, EmbeddingMatrix>) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    put_header(&mut out, EMBEDDING_MAGIC);
    put_u32(&mut out, entries.len())?;
    let mut dim = None;
    for (id, m) in entries {
        let expected = *dim.get_or_insert(m.d());
        if m.d() != expected {
            return Err(DataError::DimensionMismatchAcrossEntries {
                id: id.clone(),
                expected,
                found: m.d(),
            });
        }
        put_id(&mut out, id)?;
        put_u32(&mut out, m.n())?;
        put_u32(&mut out, m.d())?;
        put_f32s(&mut out, m.values());
    }
    Ok(out)
}

pub fn decode_embedding_cache(bytes: &[u8]) -> Result<BTreeMap<String, EmbeddingMatrix>, DataError> {
    let mut r = Reader::new(bytes);
    r.header(EMBEDDING_MAGIC)?;
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for _ in 0..count {
        let (id, at) = r.id()?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(DataError::BadEntry {
                offset: at,
                reason: "dimension 0".into(),
            });
        }
        let expected = *dim.get_or_insert(d);
        if d != expected {
            return Err(DataError::DimensionMismatchAcrossEntries { id, expected, found: d });
        }
        let values = r.floats(n.saturating_mul(d), 4)?;
        let m = EmbeddingMatrix::new(n, d, values).map_err(|e| DataError::BadEntry {
            offset: at,
            reason: e.to_string(),
        })?;
        if out.insert(id.clone(), m).is_some() {
            return Err(DataError::DuplicateEntry { id, offset: at });
        }
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_coherence_cache(entries: &BTreeMap<String, CoherenceSeries>) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    put_header(&mut out, COHERENCE_MAGIC);
    put_u32(&mut out, entries.len())?;
    for (id, c) in entries {
        put_id(&mut out, id)?;
        put_u32(&mut out, c.len())?;
        put_f32s(&mut out, c.values());
    }
    Ok(out)
}

pub fn decode_coherence_cache(bytes: &[u8]) -> Result<BTreeMap<String, CoherenceSeries>, DataError> {
    let mut r = Reader::new(bytes);
    r.header(COHERENCE_MAGIC)?;
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let (id, at) = r.id()?;
        let m = r.u32()? as usize;
        let values = r.floats(m, 4)?;
        let c = CoherenceSeries::new(values).map_err(|e| DataError::BadEntry {
            offset: at,
            reason: e.to_string(),
        })?;
        if out.insert(id.clone(), c).is_some() {
            return Err(DataError::DuplicateEntry { id, offset: at });
        }
    }
    r.finish()?;
    Ok(out)
}

/// Weights are stored as f64 so a reloaded head reproduces its outputs
/// exactly.
pub fn encode_head(head: &ProjectionHead) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    put_header(&mut out, HEAD_MAGIC);
    put_u32(&mut out, head.dim())?;
    out.push(u8::from(head.is_trained()));
    for v in head.weight().iter().chain(head.bias()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_head(bytes: &[u8]) -> Result<ProjectionHead, DataError> {
    let mut r = Reader::new(bytes);
    r.header(HEAD_MAGIC)?;
    let at = r.offset;
    let d = r.u32()? as usize;
    let trained = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(DataError::BadEntry {
                offset: at + 4,
                reason: format!("trained flag {other}"),
            })
        }
    };
    let weight = r.floats(d.saturating_mul(d), 8)?;
    let bias = r.floats(d, 8)?;
    r.finish()?;
    ProjectionHead::from_parts(d, weight, bias, trained).ok_or(DataError::BadEntry {
        offset: at,
        reason: "inconsistent head shape".into(),
    })
}

pub fn load_embedding_cache(path: &Path) -> Result<BTreeMap<String, EmbeddingMatrix>, DataError> {
    decode_embedding_cache(&read_bytes(path)?)
}

pub fn write_embedding_cache(path: &Path, entries: &BTreeMap<String, EmbeddingMatrix>) -> Result<(), DataError> {
    write_file(path, &encode_embedding_cache(entries)?)
}

pub fn load_coherence_cache(path: &Path) -> Result<BTreeMap<String, CoherenceSeries>, DataError> {
    decode_coherence_cache(&read_bytes(path)?)
}

pub fn write_coherence_cache(path: &Path, entries: &BTreeMap<String, CoherenceSeries>) -> Result<(), DataError> {
    write_file(path, &encode_coherence_cache(entries)?)
}

pub fn load_head(path: &Path) -> Result<ProjectionHead, DataError> {
    decode_head(&read_bytes(path)?)
}

pub fn write_head(path: &Path, head: &ProjectionHead) -> Result<(), DataError> {
    write_file(path, &encode_head(head)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> BTreeMap<String, EmbeddingMatrix> {
        BTreeMap::from([
            (
                "a".to_string(),
                EmbeddingMatrix::new(2, 3, vec![0.5, -1.25, 3.0, 0.0, 1e-3_f32 as f64, 7.0]).unwrap(),
            ),
            (
                "b".to_string(),
                EmbeddingMatrix::new(1, 3, vec![1.0, 2.0, 4.0]).unwrap(),
            ),
        ])
    }

    #[test]
    fn embedding_round_trip() {
        let bytes = encode_embedding_cache(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"DTSE");
        let back = decode_embedding_cache(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode_embedding_cache(&back).unwrap(), bytes);
    }

    #[test]
    fn embedding_errors() {
        let mut bytes = encode_embedding_cache(&sample()).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::BadMagic { .. })
        ));

        let mut bytes = good.clone();
        bytes[4] = 2;
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::VersionUnsupported(2))
        ));

        assert!(matches!(
            decode_embedding_cache(&good[..good.len() - 3]),
            Err(DataError::TruncatedFile { .. })
        ));
        // inflate n of the first entry (after magic, version, count, id_len, id "a")
        let mut bytes = good.clone();
        bytes[15..19].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::TruncatedFile { offset: 23, .. })
        ));

        let mut bytes = good.clone();
        bytes.push(0);
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::TrailingBytes { .. })
        ));

        assert!(matches!(decode_embedding_cache(b"DT"), Err(DataError::BadMagic { .. })));

        let mut mixed = sample();
        mixed.insert("c".into(), EmbeddingMatrix::new(1, 2, vec![1.0, 1.0]).unwrap());
        assert!(matches!(
            encode_embedding_cache(&mixed),
            Err(DataError::DimensionMismatchAcrossEntries { .. })
        ));
    }

    #[test]
    fn mixed_dimensions_on_read() {
        // hand-built file: entry "a" with d=2, entry "b" with d=3
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DTSE");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for (id, d) in [("a", 2u32), ("b", 3u32)] {
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.extend_from_slice(&d.to_le_bytes());
            for _ in 0..d {
                bytes.extend_from_slice(&1.0f32.to_le_bytes());
            }
        }
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::DimensionMismatchAcrossEntries {
                expected: 2,
                found: 3,
                ..
            })
        ));
    }

    #[test]
    fn coherence_round_trip_and_errors() {
        let entries = BTreeMap::from([
            ("x".to_string(), CoherenceSeries::new(vec![0.25, 0.75]).unwrap()),
            ("y".to_string(), CoherenceSeries::new(vec![]).unwrap()),
        ]);
        let bytes = encode_coherence_cache(&entries).unwrap();
        assert_eq!(&bytes[..4], b"DTSC");
        assert_eq!(decode_coherence_cache(&bytes).unwrap(), entries);
        assert!(matches!(
            decode_embedding_cache(&bytes),
            Err(DataError::BadMagic { .. })
        ));
        assert!(matches!(
            decode_coherence_cache(&bytes[..bytes.len() - 1]),
            Err(DataError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn nan_rejected() {
        let mut bytes = encode_coherence_cache(&BTreeMap::from([(
            "x".to_string(),
            CoherenceSeries::new(vec![0.5]).unwrap(),
        )]))
        .unwrap();
        let end = bytes.len();
        bytes[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_coherence_cache(&bytes),
            Err(DataError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn head_round_trip() {
        let head = ProjectionHead::from_parts(2, vec![1.0, 0.1, -0.3, 0.9], vec![0.01, 0.0], true).unwrap();
        let bytes = encode_head(&head).unwrap();
        assert_eq!(&bytes[..4], b"DTSH");
        assert_eq!(decode_head(&bytes).unwrap(), head);
        assert!(matches!(
            decode_head(&bytes[..10]),
            Err(DataError::TruncatedFile { .. })
        ));
    }

    proptest! {
        #[test]
        fn f32_bits_survive(raw in proptest::collection::vec(any::<u32>(), 1..40)) {
            let values: Vec<f64> = raw
                .iter()
                .map(|&b| f32::from_bits(b))
                .map(|v| if v.is_finite() { v } else { 0.5 })
                .map(f64::from)
                .collect();
            let n = values.len();
            let m = EmbeddingMatrix::new(n, 1, values).unwrap();
            let entries = BTreeMap::from([("p".to_string(), m)]);
            let bytes = encode_embedding_cache(&entries).unwrap();
            let back = decode_embedding_cache(&bytes).unwrap();
            prop_assert_eq!(encode_embedding_cache(&back).unwrap(), bytes);
            let orig = entries["p"].values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            let got = back["p"].values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(orig, got);
        }
    }
}
