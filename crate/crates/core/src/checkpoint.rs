//! Checksummed binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TD3N"                      magic
//! u32                         format version
//! u64, bytes                  config blob (UTF-8 TOML)
//! u64                         tensor count
//! per tensor:
//!   u64, bytes                name (UTF-8)
//!   u8                        dtype tag (1 = f32, 2 = f64)
//!   u64                       rank
//!   u64 * rank                extents
//!   bytes                     row-major payload
//! u32                         CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TD3N";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => TensorData::F32(t.cast()),
            DType::F64 => TensorData::F64(t.cast()),
        }
    }

    /// Converts to the requested precision.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub config: String,
    pub tensors: Vec<(String, TensorData)>,
}

impl Container {
    pub fn new(config: String) -> Self {
        Container { config, tensors: Vec::new() }
    }

    pub fn push<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        self.tensors.push((name.into(), TensorData::from_tensor(t)));
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&TensorData> {
        self.get(name).ok_or_else(|| Error::Corrupt(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_bytes(&mut out, self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            write_bytes(&mut out, name.as_bytes());
            out.push(t.dtype().tag());
            let shape = t.shape();
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                TensorData::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                TensorData::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("not a TD3N container (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Corrupt(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let config = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Corrupt("config is not UTF-8".into()))?;
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Corrupt("name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Corrupt(format!("unknown dtype tag {tag} for `{name}`")))?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Corrupt(format!("extent overflow for `{name}`")))?;
            let raw = r.take(n.checked_mul(dtype.size()).ok_or_else(|| Error::Corrupt("payload overflow".into()))?)?;
            let t = match dtype {
                DType::F32 => TensorData::F32(Tensor::new(
                    shape,
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect(),
                )?),
                DType::F64 => TensorData::F64(Tensor::new(
                    shape,
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
                )?),
            };
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Container { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt("truncated container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("length exceeds address space".into()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("a = 1\n".into());
        c.push("w", &Tensor::<f32>::from_f64(vec![2, 2], &[1.0, -2.5, 3.25, 0.0]).unwrap());
        c.push("s", &Tensor::<f64>::scalar(std::f64::consts::PI));
        c
    }

    #[test]
    fn round_trip() {
        let bytes = sample().to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("s").unwrap().dtype(), DType::F64);
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 0x40;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Corrupt(m)) if m.contains("CRC")));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes();
        assert!(Container::from_bytes(&bytes[..3]).is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }
}
