//! Binary tensor container shared by every checkpoint and embedding table.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LEMB"                      4 bytes magic
//! version: u32                currently 1
//! repeated until end of file:
//!   name_len: u32, name: UTF-8 bytes
//!   rank: u32, dims: rank × u64
//!   data: product(dims) × f32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::params::Params;

pub const MAGIC: &[u8; 4] = b"LEMB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// An ordered list of named tensors as stored on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(NamedTensor { name: name.to_string(), dims, data });
    }

    pub fn push_mat(&mut self, name: &str, m: &Mat) {
        let data = m.iter().map(|&v| v as f32).collect();
        self.push(name, vec![m.nrows(), m.ncols()], data);
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.push(name, vec![v.len()], v.iter().map(|&x| x as f32).collect());
    }

    /// Adds every tensor of `params` under `prefix`.
    pub fn push_params(&mut self, prefix: &str, params: &Params) {
        for (name, m) in params.iter() {
            self.push_mat(&format!("{prefix}{name}"), m);
        }
    }

    fn entry(&self, name: &str) -> Result<&NamedTensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("tensor `{name}` not found")))
    }

    /// Reads a rank-1 or rank-2 tensor as a matrix (rank 1 becomes one row).
    pub fn mat(&self, name: &str) -> Result<Mat> {
        let e = self.entry(name)?;
        let (r, c) = match e.dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            dims => return Err(Error::Format(format!("tensor `{name}` has unsupported rank {}", dims.len()))),
        };
        let data = e.data.iter().map(|&v| v as f64).collect();
        Mat::from_shape_vec((r, c), data).map_err(|err| Error::Format(err.to_string()))
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.entry(name)?;
        Ok(e.data.iter().map(|&v| v as f64).collect())
    }

    /// Collects all tensors under `prefix` with the prefix stripped.
    pub fn params(&self, prefix: &str) -> Result<Params> {
        let mut p = Params::new();
        for e in &self.entries {
            if let Some(rest) = e.name.strip_prefix(prefix) {
                p.insert(rest, self.mat(&e.name)?);
            }
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected LEMB".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let mut file = Self::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let raw = cur.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            file.entries.push(NamedTensor { name, dims, data });
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of tensor file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Rounds every entry through `f32`, matching what a save/load cycle yields.
pub fn round_to_f32(m: &Mat) -> Mat {
    m.mapv(|v| v as f32 as f64)
}
