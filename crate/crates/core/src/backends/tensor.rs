//! `TOTF` feature tensor files: magic, u16 version, u32 n/H/W, then
//! `n*H*W` little-endian f32 values, channel-major then row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::symbolizer::FeatureMap;

pub const TENSOR_MAGIC: &[u8; 4] = b"TOTF";
pub const TENSOR_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12;

pub fn encode_feature_tensor(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + fm.values().len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    for dim in [fm.channels(), fm.height(), fm.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in fm.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_tensor(bytes: &[u8], location: &str) -> Result<FeatureMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(location, "truncated TOTF header"));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::parse(location, "missing TOTF magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(Error::VersionMismatch {
            expected: TENSOR_VERSION,
            found: version,
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::parse(location, "tensor dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::parse(
            location,
            format!(
                "header declares {n}x{h}x{w} = {count} values but the payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(pos));
    }
    FeatureMap::new(n, h, w, values).map_err(|e| match e {
        Error::EmptyFeatureMap => Error::parse(location, "tensor has a zero dimension"),
        other => other,
    })
}

pub fn read_feature_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_tensor(&bytes, &path.display().to_string())
}

pub fn write_feature_tensor(fm: &FeatureMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_feature_tensor(fm)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_tensor_round_trip() {
        let values: Vec<f32> = (0..18).map(|i| i as f32 * 0.5 - 2.0).collect();
        let fm = FeatureMap::new(2, 3, 3, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.totf");
        write_feature_tensor(&fm, &path).unwrap();
        assert_eq!(read_feature_tensor(&path).unwrap(), fm);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"TOTF");
        assert_eq!(bytes.len(), 18 + 18 * 4);
    }

    #[test]
    fn payload_length_mismatch() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0; 4]).unwrap();
        let mut bytes = encode_feature_tensor(&fm);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode_feature_tensor(&bytes, "t"), Err(Error::Parse { .. })));
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_feature_tensor(&bytes, "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn nan_payload() {
        let fm = FeatureMap::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_feature_tensor(&fm);
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_feature_tensor(&bytes, "t"),
            Err(Error::NonFiniteValue(1))
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let fm = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let mut bytes = encode_feature_tensor(&fm);
        bytes[4] = 2;
        assert!(matches!(
            decode_feature_tensor(&bytes, "t"),
            Err(Error::VersionMismatch { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_feature_tensor(&bytes, "t"), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(n in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u32>()) {
            let values: Vec<f32> = (0..n * h * w)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)) & 0x3fff_ffff))
                .collect();
            let fm = FeatureMap::new(n, h, w, values).unwrap();
            let back = decode_feature_tensor(&encode_feature_tensor(&fm), "p").unwrap();
            let a: Vec<u32> = fm.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
