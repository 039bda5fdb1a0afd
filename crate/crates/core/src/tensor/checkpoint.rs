//! Named-tensor checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VVDT" | version: u32 | count: u32
//! count × { name_len: u32 | name: UTF-8 | rank: u32 | dims: rank × u64 | data: f32 × volume }
//! manifest_len: u32 | manifest: UTF-8
//! ```
//!
//! The trailing manifest is free text; the model stores its config there so a
//! checkpoint describes itself.

use std::path::Path;

use super::Tensor;
use crate::bytes::{checked_volume, put_f32s, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VVDT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub manifest: String,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f32s(&mut out, t.data().iter().copied());
        }
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8], path: Option<&Path>) -> Result<Self> {
        let mut r = Reader::new(buf, path);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(r.err("bad magic, expected VVDT"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| r.err("tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.err(format!("tensor {name}: unsupported rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64("dims")?;
                let d = usize::try_from(d).map_err(|_| r.err(format!("tensor {name}: dimension overflow")))?;
                dims.push(d);
            }
            let volume = checked_volume(&dims).ok_or_else(|| r.err(format!("tensor {name}: dimension overflow")))?;
            let data = r.f32s(volume, "tensor data")?;
            let t = Tensor::new(dims, data).map_err(|e| r.err(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        let manifest_len = r.u32("manifest length")? as usize;
        let manifest = std::str::from_utf8(r.take(manifest_len, "manifest")?)
            .map_err(|_| r.err("manifest is not UTF-8"))?
            .to_owned();
        if r.remaining() != 0 {
            return Err(r.err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { tensors, manifest })
    }
}

/// Writes tensors (cast to f32) and a manifest.
pub fn write_checkpoint<T: Scalar>(path: &Path, tensors: &[(String, Tensor<T>)], manifest: &str) -> Result<()> {
    let ckpt = Checkpoint {
        tensors: tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        manifest: manifest.to_owned(),
    };
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&buf, Some(path))
}
