//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GDCK" | version u8 | meta_len u32 | meta JSON
//! | n_tensors u32 | n_tensors × (name_len u16 | name | ndim u8 | dims u32… | f64…)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context as _, Result};
use gestdiff_core::conditioning::ConditioningConfig;
use gestdiff_core::denoiser::{Denoiser, DenoiserConfig};
use gestdiff_core::params::ParamStore;
use gestdiff_core::Tensor;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"GDCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub denoiser: DenoiserConfig,
    pub conditioning: ConditioningConfig,
    /// Rows of the learnable surgeon table (empty for external strategies).
    pub surgeons: Vec<String>,
    pub config: BTreeMap<String, String>,
}

pub fn to_bytes(model: &Denoiser, config: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        denoiser: model.config().clone(),
        conditioning: model.conditioner().config.clone(),
        surgeons: model.surgeons(),
        config: config.clone(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&u32::try_from(meta.len())?.to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&u32::try_from(model.params().len())?.to_le_bytes());
    for (name, tensor) in model.params().iter() {
        out.extend_from_slice(&u16::try_from(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(tensor.shape().len())?);
        for &d in tensor.shape() {
            out.extend_from_slice(&u32::try_from(d)?.to_le_bytes());
        }
        for v in tensor.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.bytes.len(), "checkpoint truncated at byte {}", self.pos);
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Denoiser, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    ensure!(r.take(4)? == MAGIC, "not a checkpoint (bad magic)");
    let version = r.array::<1>()?[0];
    ensure!(version == VERSION, "unsupported checkpoint version {version}, expected {VERSION}");
    let meta_len = u32::from_le_bytes(r.array()?) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?).context("checkpoint metadata")?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(name_len)?).context("tensor name")?.to_string();
        let ndim = r.array::<1>()?[0] as usize;
        let shape = (0..ndim)
            .map(|_| Ok(u32::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| Ok(f64::from_le_bytes(r.array()?))).collect::<Result<Vec<_>>>()?;
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        bail!("{} trailing bytes after the last tensor", bytes.len() - r.pos);
    }
    let model = Denoiser::from_params(meta.denoiser.clone(), meta.conditioning.clone(), &meta.surgeons, store)
        .context("checkpoint tensors do not match its configuration")?;
    Ok((model, meta))
}

pub fn save(path: &Path, model: &Denoiser, config: &BTreeMap<String, String>) -> Result<()> {
    fs::write(path, to_bytes(model, config)?).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn load(path: &Path) -> Result<(Denoiser, CheckpointMeta)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}
