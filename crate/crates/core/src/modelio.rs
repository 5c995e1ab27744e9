//! Versioned binary container for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RELCLSMD"
//! version    u32
//! kind       u16 length + UTF-8 bytes      ("svm", "clstm")
//! metadata   u64 length + UTF-8 JSON bytes
//! tensors    u32 count, then per tensor:
//!              name   u16 length + UTF-8 bytes
//!              dtype  u8 (1 = f64, 2 = u64)
//!              ndim   u8, then ndim × u64 dims
//!              data   product(dims) × 8 bytes
//! ```
//!
//! Floating point parameters live in tensors as raw IEEE-754 bits, so a
//! load/save cycle reproduces the file byte for byte.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RELCLSMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape/data mismatch"
        );
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::F64(data),
        }
    }

    pub fn u64(name: impl Into<String>, shape: &[usize], data: Vec<u64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape/data mismatch"
        );
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::U64(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Vec<u8>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: &str, meta: Vec<u8>) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    fn find(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Model(format!("missing tensor {name:?}")))
    }

    /// Fetch an f64 tensor and check its shape.
    pub fn f64(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self.find(name)?;
        if t.shape != shape {
            return Err(Error::Model(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        match &t.data {
            TensorData::F64(v) => Ok(v),
            TensorData::U64(_) => Err(Error::Model(format!("tensor {name:?} is not f64"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<(&[usize], &[u64])> {
        let t = self.find(name)?;
        match &t.data {
            TensorData::U64(v) => Ok((&t.shape, v)),
            TensorData::F64(_) => Err(Error::Model(format!("tensor {name:?} is not u64"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str16(&mut w, &self.kind)?;
        w.write_all(&(self.meta.len() as u64).to_le_bytes())?;
        w.write_all(&self.meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            write_str16(&mut w, &t.name)?;
            let dtype: u8 = match t.data {
                TensorData::F64(_) => 1,
                TensorData::U64(_) => 2,
            };
            w.write_all(&[dtype, t.shape.len() as u8])?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &t.data {
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::U64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let c = Self::read(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Model(format!("{} trailing bytes", r.len())));
        }
        Ok(c)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Model("not a relclass model file".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format version {version}")));
        }
        let kind = read_str16(r)?;
        let meta_len = u64::from_le_bytes(read_array(r)?) as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(r, &mut meta)?;
        let count = u32::from_le_bytes(read_array(r)?);
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_str16(r)?;
            let [dtype, ndim] = read_array::<_, 2>(r)?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(read_array(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype {
                1 => TensorData::F64(
                    (0..n)
                        .map(|_| read_array(r).map(f64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                2 => TensorData::U64(
                    (0..n)
                        .map(|_| read_array(r).map(u64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                other => return Err(Error::Model(format!("unknown tensor dtype {other}"))),
            };
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Container { kind, meta, tensors })
    }
}

fn write_str16<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u16).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Model(format!("truncated model file: {e}")))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_str16<R: Read>(r: &mut R) -> Result<String> {
    let len = u16::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Model("invalid UTF-8 string".into()))
}

/// Peek at the model kind stored in a container without decoding tensors.
pub fn model_kind(bytes: &[u8]) -> Result<String> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Model("not a relclass model file".into()));
    }
    let _version: [u8; 4] = read_array(&mut r)?;
    read_str16(&mut r)
}
