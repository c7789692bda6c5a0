//! KTF1 tensor files.
//!
//! Layout, all little-endian:
//!
//! | bytes          | field                                   |
//! |----------------|-----------------------------------------|
//! | 4              | magic `KTF1`                            |
//! | 1              | dtype (0 = f32, 1 = f64)                |
//! | 1              | rank (1..=4)                            |
//! | 4 * rank       | dims, u32 each                          |
//! | numel * size   | row-major payload                       |
//! | 4              | CRC-32 (IEEE) of the payload bytes      |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor, MAX_RANK};

pub const KTF_MAGIC: &[u8; 4] = b"KTF1";
const MAX_DIM: u64 = 1 << 31;

/// A tensor read from disk whose element type is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let size = T::DTYPE.size();
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + t.len() * size + 4);
    out.extend_from_slice(KTF_MAGIC);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let payload_start = out.len();
    for &v in t.data() {
        v.write_le(&mut out);
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn decode_payload<T: Scalar>(dims: &[usize], payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Tensor::new(dims, data).map_err(|e| Error::Format(format!("invalid payload: {e}")))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 6 {
        return Err(Error::Corrupt("file too short for a KTF1 header".into()));
    }
    if &bytes[0..4] != KTF_MAGIC {
        return Err(Error::Format("bad magic, expected KTF1".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let rank = bytes[5] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let header = 6 + 4 * rank;
    if bytes.len() < header + 4 {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel: u64 = 1;
    for i in 0..rank {
        let at = 6 + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as u64;
        if d == 0 || d > MAX_DIM {
            return Err(Error::Format(format!("dimension {i} has invalid size {d}")));
        }
        numel = numel
            .checked_mul(d)
            .filter(|&n| n <= MAX_DIM)
            .ok_or_else(|| Error::Format("element count exceeds 2^31".into()))?;
        dims.push(d as usize);
    }
    let payload_len = numel as usize * dtype.size();
    if bytes.len() != header + payload_len + 4 {
        return Err(Error::Corrupt(format!(
            "expected {} payload bytes plus CRC, found {}",
            payload_len,
            bytes.len() - header
        )));
    }
    let payload = &bytes[header..header + payload_len];
    let stored = u32::from_le_bytes(bytes[header + payload_len..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "payload CRC mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(&dims, payload)?),
        DType::F64 => AnyTensor::F64(decode_payload(&dims, payload)?),
    })
}

/// Writes via a temporary file in the destination directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encode_tensor(t))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode_tensor(&fs::read(path)?)
}

/// Reads a tensor and requires it to be stored with element type `T`.
pub fn read_tensor_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let any = read_tensor(path)?;
    let found = any.dtype();
    let mismatch = || Error::Format(format!("expected {:?} tensor, file holds {found:?}", T::DTYPE));
    match any {
        AnyTensor::F32(t) if T::DTYPE == DType::F32 => Ok(t.cast()),
        AnyTensor::F64(t) if T::DTYPE == DType::F64 => Ok(t.cast()),
        _ => Err(mismatch()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[0..4], b"KTF1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..10], &2u32.to_le_bytes());
        assert_eq!(&b[10..14], &1u32.to_le_bytes());
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 6 + 8 + 8 + 4);
        assert_eq!(&b[22..], &crc32fast::hash(&b[14..22]).to_le_bytes());
    }

    #[test]
    fn single_zero_roundtrip() {
        let t = Tensor::<f32>::new(&[1], vec![0.0]).unwrap();
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), AnyTensor::F32(t));
    }

    #[test]
    fn corruption_is_detected() {
        let t = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 * 0.5).unwrap();
        let good = encode_tensor(&t);
        let mut flipped = good.clone();
        flipped[6 + 8 + 5] ^= 0x10;
        assert!(matches!(decode_tensor(&flipped), Err(Error::Corrupt(_))));
        let mut magic = good.clone();
        magic[3] = b'2';
        assert!(matches!(decode_tensor(&magic), Err(Error::Format(_))));
        assert!(matches!(decode_tensor(&good[..good.len() - 1]), Err(Error::Corrupt(_))));
        let mut huge = good.clone();
        huge[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_tensor(&huge), Err(Error::Format(_))));
    }

    #[test]
    fn typed_read_checks_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ktf");
        let t = Tensor::<f64>::ones(&[2, 2]).unwrap();
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor_as::<f64>(&p).unwrap(), t);
        assert!(matches!(read_tensor_as::<f32>(&p), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(dims in proptest::collection::vec(1usize..6, 1..=4), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t32 = Tensor::<f32>::from_fn(&dims, |_| rng.gen_range(-1e6f32..1e6)).unwrap();
            let t64 = Tensor::<f64>::from_fn(&dims, |_| rng.gen_range(-1e6..1e6)).unwrap();
            match decode_tensor(&encode_tensor(&t32)).unwrap() {
                AnyTensor::F32(back) => prop_assert!(back.data().iter().zip(t32.data()).all(|(a, b)| a.to_bits() == b.to_bits())),
                _ => prop_assert!(false),
            }
            match decode_tensor(&encode_tensor(&t64)).unwrap() {
                AnyTensor::F64(back) => prop_assert!(back.data().iter().zip(t64.data()).all(|(a, b)| a.to_bits() == b.to_bits())),
                _ => prop_assert!(false),
            }
        }
    }
}
