//! Little-endian checkpoint files.
//!
//! Layout: magic `DUSRCKPT`, version `u32`, the eight configuration fields
//! as `u32` in [`ModelConfig`] order (precision as 0 single / 1 double),
//! tensor count `u32`, then per tensor a `u16` name length, the UTF-8 name,
//! a `u8` rank, `u32` dims and row-major `f32` data. The model kind follows
//! from the tensor names.

use std::fs;
use std::path::Path;

use super::{Architecture, ModelConfig, ModelKind, Network, Precision};
use crate::diffengine::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"DUSRCKPT";
pub const VERSION: u32 = 1;

/// Decoded checkpoint contents. Values are binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot of a network, rounding values to binary32.
    pub fn from_network<F: Real>(net: &Network<F>) -> Self {
        let tensors = net
            .store
            .iter()
            .map(|(name, p)| (name.to_string(), p.value.cast::<f32>()))
            .collect();
        Self {
            kind: net.kind(),
            config: *net.config(),
            tensors,
        }
    }

    /// Fails with [`Error::ConfigMismatch`] unless the stored configuration
    /// equals `requested`.
    pub fn expect_config(&self, requested: &ModelConfig) -> Result<()> {
        if &self.config != requested {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, requested {:?}",
                self.config, requested
            )));
        }
        Ok(())
    }

    pub fn to_network<F: Real>(&self) -> Result<Network<F>> {
        let arch = Architecture::new(self.kind, self.config)?;
        let nonneg: Vec<(&str, bool)> = arch.param_specs().iter().map(|s| (s.name, s.nonneg)).collect();
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            let flag = nonneg.iter().find(|(n, _)| n == name).is_some_and(|(_, f)| *f);
            store
                .insert(name, t.cast::<F>(), flag)
                .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        }
        Network::from_store(self.kind, self.config, store)
    }
}

fn config_fields(c: &ModelConfig) -> [u32; 8] {
    [
        c.feat_filters as u32,
        c.feat_kernel as u32,
        c.code_dim as u32,
        c.patch_dim as u32,
        c.agg_kernel as u32,
        c.stages as u32,
        c.scale as u32,
        c.precision.code(),
    ]
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for f in config_fields(&ckpt.config) {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidParameter(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::InvalidParameter(format!("tensor `{name}` has rank {}", t.rank())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::InvalidParameter(format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(format!("{:?}", String::from_utf8_lossy(magic))));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut f = [0u32; 8];
    for (i, v) in f.iter_mut().enumerate() {
        *v = r.u32(&format!("config field {i}"))?;
    }
    let config = ModelConfig {
        feat_filters: f[0] as usize,
        feat_kernel: f[1] as usize,
        code_dim: f[2] as usize,
        patch_dim: f[3] as usize,
        agg_kernel: f[4] as usize,
        stages: f[5] as usize,
        scale: f[6] as usize,
        precision: Precision::from_code(f[7])?,
    };
    config
        .validate()
        .map_err(|e| Error::MalformedHeader(format!("invalid configuration: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::MalformedHeader(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader(format!("tensor `{name}` is too large")))?;
        let nbytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::MalformedHeader(format!("tensor `{name}` is too large")))?;
        let raw = r.take(nbytes, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let kind = if tensors.iter().any(|(n, _)| n.starts_with("h3.")) {
        ModelKind::DmscPlus
    } else {
        ModelKind::Dmsc
    };
    check_tensors(kind, &config, &tensors)?;
    Ok(Checkpoint { kind, config, tensors })
}

fn check_tensors(kind: ModelKind, config: &ModelConfig, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let specs = Architecture::new(kind, *config)?.param_specs();
    if specs.len() != tensors.len() {
        return Err(Error::ConfigMismatch(format!(
            "{kind} expects {} tensors, file has {}",
            specs.len(),
            tensors.len()
        )));
    }
    for s in &specs {
        let t = tensors
            .iter()
            .find(|(n, _)| n == s.name)
            .ok_or_else(|| Error::ConfigMismatch(format!("missing tensor `{}`", s.name)))?;
        if t.1.shape() != s.shape.as_slice() {
            return Err(Error::ConfigMismatch(format!(
                "tensor `{}` has shape {:?}, configuration implies {:?}",
                s.name,
                t.1.shape(),
                s.shape
            )));
        }
    }
    Ok(())
}

/// Saves `net`; values are rounded to binary32.
pub fn save_checkpoint<F: Real>(path: impl AsRef<Path>, net: &Network<F>) -> Result<()> {
    fs::write(path, write_checkpoint(&Checkpoint::from_network(net))?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}
