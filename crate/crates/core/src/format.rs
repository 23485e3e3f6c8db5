//! Binary containers for embeddings (`CPEB`) and attention maps (`CPEA`).
//!
//! ```text
//! CPEB: "CPEB" | version u16 = 1 | dtype u8 = 0 (f32) | reserved u8 = 0
//!       | n_rows u32 | dim u32 | n_rows * dim f32, row-major
//! CPEA: "CPEA" | version u16 = 1 | height u32 | width u32
//!       | height * width f32, row-major, values >= 0
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::cadrs::AttentionMap;
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};

pub const CPEB_MAGIC: [u8; 4] = *b"CPEB";
pub const CPEA_MAGIC: [u8; 4] = *b"CPEA";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

const CPEB_HEADER: usize = 16;
const CPEA_HEADER: usize = 14;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn payload_len(a: u32, b: u32) -> Result<usize> {
    (a as usize)
        .checked_mul(b as usize)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Overflow(format!("{a} x {b} f32 values")))
}

fn read_f32s(payload: &[u8]) -> impl Iterator<Item = f32> + '_ {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
}

fn check_payload(expected: usize, found: usize) -> Result<()> {
    if found < expected {
        Err(Error::Truncated { expected, found })
    } else if found > expected {
        Err(Error::TrailingBytes { expected, found })
    } else {
        Ok(())
    }
}

/// Encodes a set as CPEB bytes. Values are narrowed to `f32`.
pub fn encode_embedding_set(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let rows = u32::try_from(set.len()).map_err(|_| Error::Overflow("row count".into()))?;
    let dim = u32::try_from(set.dim()).map_err(|_| Error::Overflow("dim".into()))?;
    let mut out = Vec::with_capacity(CPEB_HEADER + set.as_flat().len() * 4);
    out.extend_from_slice(&CPEB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in set.as_flat() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embedding_set(set_id: impl Into<String>, bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || bytes[..4] != CPEB_MAGIC {
        return Err(Error::BadMagic { kind: "CPEB" });
    }
    if bytes.len() < CPEB_HEADER {
        return Err(Error::Truncated {
            expected: CPEB_HEADER,
            found: bytes.len(),
        });
    }
    let version = u16_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: "CPEB",
            version,
        });
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[6]));
    }
    let rows = u32_at(bytes, 8);
    let dim = u32_at(bytes, 12);
    let expected = payload_len(rows, dim)?;
    let payload = &bytes[CPEB_HEADER..];
    check_payload(expected, payload.len())?;
    let data = read_f32s(payload).map(f64::from).collect();
    EmbeddingSet::from_flat(set_id, dim as usize, data)
}

pub fn save_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_embedding_set(set)?).map_err(|e| Error::io(path, e))
}

/// Reads a CPEB file. Rows are returned as stored; see
/// [`load_normalized_set`] for the variant that asserts unit norms.
pub fn load_embedding_set(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding_set(path.display().to_string(), &bytes)
}

/// Reads a CPEB file and fails if any row is not unit-norm.
pub fn load_normalized_set(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let set = load_embedding_set(path)?;
    set.check_normalized()?;
    Ok(set)
}

pub fn encode_attention_map(map: &AttentionMap) -> Result<Vec<u8>> {
    let h = u32::try_from(map.height()).map_err(|_| Error::Overflow("height".into()))?;
    let w = u32::try_from(map.width()).map_err(|_| Error::Overflow("width".into()))?;
    let mut out = Vec::with_capacity(CPEA_HEADER + map.values().len() * 4);
    out.extend_from_slice(&CPEA_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_attention_map(bytes: &[u8]) -> Result<AttentionMap> {
    if bytes.len() < 4 || bytes[..4] != CPEA_MAGIC {
        return Err(Error::BadMagic { kind: "CPEA" });
    }
    if bytes.len() < CPEA_HEADER {
        return Err(Error::Truncated {
            expected: CPEA_HEADER,
            found: bytes.len(),
        });
    }
    let version = u16_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: "CPEA",
            version,
        });
    }
    let h = u32_at(bytes, 6);
    let w = u32_at(bytes, 10);
    let expected = payload_len(h, w)?;
    let payload = &bytes[CPEA_HEADER..];
    check_payload(expected, payload.len())?;
    let values = read_f32s(payload).map(f64::from).collect();
    AttentionMap::new(h as usize, w as usize, values)
}

pub fn save_attention_map(map: &AttentionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_attention_map(map)?).map_err(|e| Error::io(path, e))
}

pub fn load_attention_map(path: impl AsRef<Path>) -> Result<AttentionMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_attention_map(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingSet {
        EmbeddingSet::from_rows("s", &[vec![0.6, 0.8], vec![1.0, 0.0], vec![-0.25, 0.5]]).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_embedding_set(&sample()).unwrap();
        assert_eq!(&bytes[..4], &[0x43, 0x50, 0x45, 0x42]);
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[16..20], &0.6f32.to_le_bytes());
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.cpeb");
        let s = sample();
        save_embedding_set(&s, &path).unwrap();
        let back = load_embedding_set(&path).unwrap();
        let narrowed: Vec<f64> = s.as_flat().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.as_flat(), narrowed.as_slice());
        assert_eq!(std::fs::read(&path).unwrap(), encode_embedding_set(&back).unwrap());
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_embedding_set(&sample()).unwrap();
        bytes[0] = b'X';
        let err = decode_embedding_set("x", &bytes).unwrap_err();
        assert_eq!(err.to_string(), "not a CPEB file");
    }

    #[test]
    fn truncated_payload() {
        let set = EmbeddingSet::from_flat("t", 1, vec![0.5; 10]).unwrap();
        let mut bytes = encode_embedding_set(&set).unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = decode_embedding_set("t", &bytes).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 40, found: 36 }));
        assert!(err.to_string().starts_with("truncated"));
    }

    #[test]
    fn header_overflow_and_version() {
        let mut bytes = encode_embedding_set(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = decode_embedding_set("o", &bytes).unwrap_err();
        // 64-bit usize holds u32::MAX^2 but not times four
        assert!(matches!(err, Error::Overflow(_) | Error::Truncated { .. }));

        let mut bytes = encode_embedding_set(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_embedding_set("v", &bytes),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
        let mut bytes = encode_embedding_set(&sample()).unwrap();
        bytes[6] = 1;
        assert!(matches!(
            decode_embedding_set("d", &bytes),
            Err(Error::UnsupportedDtype(1))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_embedding_set(&sample()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_embedding_set("x", &bytes),
            Err(Error::TrailingBytes { .. })
        ));
    }

    #[test]
    fn normalized_loader_asserts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.cpeb");
        save_embedding_set(&sample(), &path).unwrap();
        assert!(matches!(
            load_normalized_set(&path),
            Err(Error::NotNormalized { row: 2, .. })
        ));
    }

    #[test]
    fn attention_round_trip_and_errors() {
        let map = AttentionMap::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 0.5]).unwrap();
        let bytes = encode_attention_map(&map).unwrap();
        assert_eq!(&bytes[..4], &[0x43, 0x50, 0x45, 0x41]);
        assert_eq!(bytes.len(), 14 + 6 * 4);
        assert_eq!(decode_attention_map(&bytes).unwrap(), map);

        let mut bad = bytes.clone();
        bad[14..18].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(
            decode_attention_map(&bad),
            Err(Error::InvalidAttention(_))
        ));
        assert_eq!(
            decode_attention_map(b"CPEB\x01\x00").unwrap_err().to_string(),
            "not a CPEA file"
        );
        assert!(matches!(
            decode_attention_map(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    proptest! {
        #[test]
        fn cpeb_round_trip_is_bit_exact(
            rows in 1usize..6,
            dim in 1usize..9,
            seed in proptest::collection::vec(-1e6f32..1e6f32, 54),
        ) {
            let data: Vec<f64> = seed.iter().cycle().take(rows * dim).map(|&v| v as f64).collect();
            let set = EmbeddingSet::from_flat("p", dim, data).unwrap();
            let bytes = encode_embedding_set(&set).unwrap();
            let back = decode_embedding_set("p", &bytes).unwrap();
            prop_assert_eq!(back.as_flat(), set.as_flat());
            prop_assert_eq!(encode_embedding_set(&back).unwrap(), bytes);
        }
    }
}
