//! Named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "IALCPGT\0"
//! version  u32      1
//! count    u32
//! per tensor:
//!   name_len u32, name (utf-8)
//!   dtype    u8     0 = f64, 1 = f32
//!   trainable u8, decay u8
//!   ndim     u32, dims u64 * ndim
//!   values   raw little-endian, row-major
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"IALCPGT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a tensor checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unknown dtype tag {0}")]
    DType(u8),
    #[error("tensor `{0}` has unsupported rank {1}")]
    Rank(String, usize),
    #[error("tensor `{name}`: stored shape {stored:?} but model expects {expected:?}")]
    Shape {
        name: String,
        stored: [usize; 2],
        expected: [usize; 2],
    },
    #[error("tensor `{0}` missing from checkpoint")]
    Missing(String),
    #[error("invalid tensor name: {0}")]
    Name(#[from] std::string::FromUtf8Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    pub decay: bool,
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor], dtype: DType) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[
            match dtype {
                DType::F64 => 0,
                DType::F32 => 1,
            },
            u8::from(t.trainable),
            u8::from(t.decay),
        ])?;
        let dims = t.tensor.shape().dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.tensor.data() {
            match dtype {
                DType::F64 => w.write_all(&v.to_le_bytes())?,
                DType::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)?;
        let mut flags = [0u8; 3];
        r.read_exact(&mut flags)?;
        let dtype = match flags[0] {
            0 => DType::F64,
            1 => DType::F32,
            other => return Err(CheckpointError::DType(other)),
        };
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => return Err(CheckpointError::Rank(name, ndim)),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = match dtype {
                DType::F64 => {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)?;
                    f64::from_le_bytes(b)
                }
                DType::F32 => {
                    let mut b = [0u8; 4];
                    r.read_exact(&mut b)?;
                    f64::from(f32::from_le_bytes(b))
                }
            };
            data.push(v);
        }
        out.push(NamedTensor {
            name,
            tensor: Tensor::from_vec(rows, cols, data).expect("length checked by construction"),
            trainable: flags[1] != 0,
            decay: flags[2] != 0,
        });
    }
    Ok(out)
}

impl ParamStore {
    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                tensor: p.value.clone(),
                trainable: p.trainable,
                decay: p.decay,
            })
            .collect()
    }

    pub fn save<W: Write>(&self, w: W, dtype: DType) -> Result<(), CheckpointError> {
        write_tensors(w, &self.to_named(), dtype)
    }

    /// Overwrites values of existing parameters by name; shapes must agree
    /// and every parameter must be present.
    pub fn load_values<R: Read>(&mut self, r: R) -> Result<(), CheckpointError> {
        let tensors = read_tensors(r)?;
        let by_name: std::collections::HashMap<_, _> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for p in self.iter_mut() {
            let t = by_name.get(&p.name).ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
            if t.tensor.shape() != p.value.shape() {
                return Err(CheckpointError::Shape {
                    name: p.name.clone(),
                    stored: t.tensor.shape().dims(),
                    expected: p.value.shape().dims(),
                });
            }
            p.value = t.tensor.clone();
        }
        Ok(())
    }
}
