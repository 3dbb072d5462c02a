//! The `FSAR1` tensor container.
//!
//! Layout: the five magic bytes `FSAR1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then the row-major payload as little-endian
//! `f32`. Feature files and checkpoint parameters both use it.

use std::fs;
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FSAR1";

pub fn encode<F: Scalar>(t: &Tensor<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 4 * (1 + t.rank() + t.numel()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    let bad = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing FSAR1 magic".into()));
    }
    let mut words = bytes[MAGIC.len()..].chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    let rank = u32::from_le_bytes(words.next().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let w = words.next().ok_or_else(|| bad("truncated header".into()))?;
        shape.push(u32::from_le_bytes(w) as usize);
    }
    let numel: usize = shape.iter().product();
    let payload = &bytes[MAGIC.len() + 4 * (rank + 1)..];
    if payload.len() != 4 * numel {
        return Err(bad(format!(
            "shape {shape:?} needs {} payload bytes, found {}",
            4 * numel,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write<F: Scalar>(path: &Path, t: &Tensor<F>) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::matrix(1, 2, vec![1.0f32, -2.5]).unwrap();
        let bytes = encode(&t);
        let mut expect = b"FSAR1".to_vec();
        expect.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("mem");
        assert!(decode(b"FSAR2\x01\0\0\0", p).is_err());
        let mut bytes = encode(&Tensor::vector(vec![1.0f32, 2.0]).unwrap());
        bytes.pop();
        assert!(matches!(decode(&bytes, p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) as u32) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
