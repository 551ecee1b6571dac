//! GFT tensor exchange files.
//!
//! Layout, all little-endian: the ASCII magic `GFT1`, a `u32` rank, `rank`
//! `u32` extents, then the `f32` values in row-major order. No padding and
//! no checksum.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const GFT_MAGIC: &[u8; 4] = b"GFT1";

pub fn encode_gft(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(GFT_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_gft(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    let fail = |msg: String| Error::Format {
        path: origin.to_path_buf(),
        msg,
    };
    let mut words = bytes.get(4..).unwrap_or_default().chunks_exact(4);
    if bytes.len() < 8 || &bytes[..4] != GFT_MAGIC {
        return Err(fail("missing GFT1 magic".into()));
    }
    let mut next_u32 = || words.next().map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]));
    let rank = next_u32().unwrap_or(0) as usize;
    if !(1..=Tensor::<f32>::MAX_RANK).contains(&rank) {
        return Err(fail(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for axis in 0..rank {
        let e = next_u32().ok_or_else(|| fail(format!("truncated header at extent {axis}")))?;
        shape.push(e as usize);
    }
    let header = 8 + 4 * rank;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| fail("extent product overflows".into()))?;
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(fail(format!(
            "expected {expected} bytes for shape {shape:?}, found {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes([w[0], w[1], w[2], w[3]]))
        .collect();
    Tensor::new(&shape, data).map_err(|e| fail(e.to_string()))
}

pub fn write_gft(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_gft(t))?;
    Ok(())
}

pub fn read_gft(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_gft(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout_is_exact() {
        let t = Tensor::new(&[1, 2], vec![1.0f32, -0.5]).unwrap();
        let bytes = encode_gft(&t);
        let mut expected = b"GFT1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn standard_f4_file_size() {
        let t = Tensor::<f32>::zeros(&[40, 40, 512]).unwrap();
        assert_eq!(encode_gft(&t).len(), 4 + 4 + 3 * 4 + 40 * 40 * 512 * 4);
    }

    #[test]
    fn rejects_corrupt_input() {
        let origin = Path::new("mem");
        assert!(decode_gft(b"GFT2\x01\0\0\0\x01\0\0\0\0\0\0\0", origin).is_err());
        assert!(decode_gft(b"GFT1\x05\0\0\0", origin).is_err());
        // one value short
        assert!(decode_gft(b"GFT1\x01\0\0\0\x02\0\0\0\0\0\0\0", origin).is_err());
        assert!(decode_gft(b"GFT1\x01\0\0\0\0\0\0\0", origin).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in prop::collection::vec(1usize..5, 1..=4),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(&shape, data).unwrap();
            let back = decode_gft(&encode_gft(&t), Path::new("mem")).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
