//! GTEN tensor files.
//!
//! Layout: `b"GTEN"`, version byte (1), dtype byte (0 = f32, 1 = f64),
//! ndim byte, `ndim` little-endian u64 dims, then the little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GTEN";
pub const VERSION: u8 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let dims = t.shape().dims();
    let mut out = Vec::with_capacity(7 + 8 * dims.len() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a GTEN buffer, converting the payload to `T` when the stored
/// dtype differs. Fewer than four dims are left-padded with ones.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |msg: &str| Error::Format(format!("GTEN: {msg}"));
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| bad("unknown dtype"))?;
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > 4 {
        return Err(bad(&format!("ndim {ndim} not in 1..=4")));
    }
    let header = 7 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let mut dims = [1usize; 4];
    for i in 0..ndim {
        let raw = &bytes[7 + 8 * i..15 + 8 * i];
        let d = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
        dims[4 - ndim + i] = usize::try_from(d).map_err(|_| bad("dim overflow"))?;
    }
    let shape = Shape(dims);
    let payload = &bytes[header..];
    if payload.len() != shape.numel() * dtype.size() {
        return Err(bad(&format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            shape.numel() * dtype.size()
        )));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::read_le(c)))
            .collect(),
    };
    Tensor::from_vec(shape, data)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"GTEN");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 0);
        assert_eq!(b[6], 4);
        assert_eq!(&b[7..15], &1u64.to_le_bytes());
        assert_eq!(&b[31..39], &2u64.to_le_bytes());
        assert_eq!(&b[39..43], &1.0f32.to_le_bytes());
        assert_eq!(&b[43..47], &(-2.0f32).to_le_bytes());
        assert_eq!(b.len(), 47);
    }

    #[test]
    fn short_dims_are_left_padded() {
        let mut b = Vec::new();
        b.extend_from_slice(b"GTEN");
        b.extend_from_slice(&[1, 1, 2]);
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&3u64.to_le_bytes());
        for i in 0..6 {
            b.extend_from_slice(&(i as f64).to_le_bytes());
        }
        let t: Tensor<f64> = decode(&b).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 2, 3));
        assert_eq!(t.at([0, 0, 1, 2]), 5.0);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let t = Tensor::<f64>::ones(Shape::new(1, 2, 2, 2));
        let good = encode(&t);
        assert!(decode::<f64>(&good[..good.len() - 1]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode::<f64>(&bad_magic).is_err());
        let mut bad_dtype = good;
        bad_dtype[5] = 9;
        assert!(decode::<f64>(&bad_dtype).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_bits(dims in prop::array::uniform4(1usize..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f64>::randn(Shape(dims), 3.0, &mut rng);
            let back: Tensor<f64> = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back, t.clone());
            let t32: Tensor<f32> = t.cast();
            let back32: Tensor<f32> = decode(&encode(&t32)).unwrap();
            prop_assert_eq!(back32, t32);
        }
    }
}
