//! FDT binary tensor files.
//!
//! Layout: `b"FDT1"`, one dtype byte (0 = f32, 1 = f64), one rank byte (4),
//! four little-endian `u64` extents `(N,C,H,W)`, then the row-major
//! little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FDT1";
pub const HEADER_LEN: usize = 4 + 1 + 1 + 4 * 8;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    t.ensure_finite("FDT write")?;
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(4);
    for d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Parses the header, returning dtype, shape and the payload slice.
pub fn decode_header(bytes: &[u8]) -> Result<(DType, Shape, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let dtype = DType::from_code(bytes[4]).ok_or(Error::BadDType(bytes[4]))?;
    if bytes[5] != 4 {
        return Err(Error::BadRank(bytes[5]));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[6 + 8 * i..14 + 8 * i]);
        *d = usize::try_from(u64::from_le_bytes(b))
            .map_err(|_| crate::error::invalid("FDT extent does not fit in memory"))?;
    }
    let shape = Shape(dims);
    let expected = shape
        .0
        .iter()
        .try_fold(dtype.size_of(), |acc, &d| acc.checked_mul(d))
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| crate::error::invalid("FDT extents overflow"))?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((dtype, shape, &bytes[HEADER_LEN..]))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (dtype, shape, payload) = decode_header(bytes)?;
    if dtype != T::DTYPE {
        return Err(Error::DTypeMismatch {
            expected: T::DTYPE,
            found: dtype,
        });
    }
    let data = payload.chunks_exact(dtype.size_of()).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

/// A tensor of either element type, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> Shape {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }
}

pub fn decode_any(bytes: &[u8]) -> Result<AnyTensor> {
    let (dtype, _, _) = decode_header(bytes)?;
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode(bytes)?),
        DType::F64 => AnyTensor::F64(decode(bytes)?),
    })
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode_any(&fs::read(path)?)
}

pub fn write_any(path: impl AsRef<Path>, t: &AnyTensor) -> Result<()> {
    match t {
        AnyTensor::F32(t) => write(path, t),
        AnyTensor::F64(t) => write(path, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_encoded_fixture() {
        let mut bytes = b"FDT1".to_vec();
        bytes.push(0);
        bytes.push(4);
        for d in [1u64, 1, 1, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]); // 1.0f32
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]); // 2.0f32
        let t: Tensor<f32> = decode(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(t.data(), &[1.0, 2.0]);
        assert_eq!(encode(&t).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_rank_and_truncation() {
        let t = Tensor::<f64>::ones(Shape::new(1, 1, 2, 2));
        let good = encode(&t).unwrap();

        let mut bad = good.clone();
        bad[2] = b'X';
        assert!(matches!(decode::<f64>(&bad), Err(Error::BadMagic)));
        assert_eq!(Error::BadMagic.to_string(), "not an FDT file");

        let mut bad = good.clone();
        bad[5] = 3;
        assert!(matches!(decode::<f64>(&bad), Err(Error::BadRank(3))));

        let short = &good[..good.len() - 3];
        match decode::<f64>(short) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, good.len());
                assert_eq!(actual, good.len() - 3);
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(decode::<f32>(&good), Err(Error::DTypeMismatch { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in (1usize..3, 1usize..4, 1usize..5, 1usize..6),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3);
            let t32 = Tensor::<f32>::rand_uniform(shape, -1e3, 1e3, &mut rng);
            let t64 = Tensor::<f64>::rand_uniform(shape, -1e3, 1e3, &mut rng);
            let back32: Tensor<f32> = decode(&encode(&t32).unwrap()).unwrap();
            let back64: Tensor<f64> = decode(&encode(&t64).unwrap()).unwrap();
            prop_assert!(t32.data().iter().zip(back32.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert!(t64.data().iter().zip(back64.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back32.shape(), shape);
        }
    }
}
