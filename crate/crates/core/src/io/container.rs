//! Versioned binary container: a JSON header plus named little-endian tensors.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "SSPLTNSR"
//! version  u32
//! hdr_len  u64, then hdr_len bytes of UTF-8 JSON
//! count    u64
//! count × { name_len u32, name, dtype u8, ndim u32, dims u64×ndim, payload }
//! ```
//!
//! Payloads are raw little-endian values in row-major order, so a save/load
//! round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSPLTNSR";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U32 = 2,
}

impl DType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U32),
            _ => Err(Error::Format(format!("unknown dtype tag {v}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Raw little-endian payload.
    pub bytes: Vec<u8>,
}

impl NamedTensor {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            dtype: DType::F64,
            shape,
            bytes,
        }
    }

    pub fn from_u32(name: impl Into<String>, shape: Vec<usize>, values: &[u32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            dtype: DType::U32,
            shape,
            bytes,
        }
    }

    pub fn from_array2(name: impl Into<String>, a: &Array2<f64>) -> Self {
        let values: Vec<f64> = a.iter().cloned().collect();
        Self::from_f64(name, vec![a.nrows(), a.ncols()], &values)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self.dtype {
            DType::F64 => Ok(self
                .bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            DType::F32 => Ok(self
                .bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()),
            DType::U32 => Err(Error::Format(format!("{} is an index tensor", self.name))),
        }
    }

    pub fn to_u32(&self) -> Result<Vec<u32>> {
        match self.dtype {
            DType::U32 => Ok(self
                .bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            _ => Err(Error::Format(format!("{} is not an index tensor", self.name))),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => {
                return Err(Error::shape(format!(
                    "{}: expected rank-2, got {:?}",
                    self.name, self.shape
                )))
            }
        };
        Array2::from_shape_vec((r, c), self.to_f64()?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// JSON header plus tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new(header: serde_json::Value) -> Self {
        Self {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("container has no tensor {name}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for t in &self.tensors {
            let expected = t.len() * t.dtype.size();
            if t.bytes.len() != expected {
                return Err(Error::Format(format!(
                    "tensor {}: payload {} bytes, shape needs {expected}",
                    t.name,
                    t.bytes.len()
                )));
            }
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.dtype as u8])?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&t.bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a tensor container (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let hlen = read_u64(&mut r)? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header = serde_json::from_slice(&hbuf)?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = read_u32(&mut r)? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)?;
            let name = String::from_utf8(nbuf).map_err(|e| Error::Format(e.to_string()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let dtype = DType::from_u8(tag[0])?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * dtype.size()];
            r.read_exact(&mut bytes)?;
            tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
