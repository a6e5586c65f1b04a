use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::layout;
use super::ModelConfig;
use crate::autodiff::{Array, ParamStore, Real};
use crate::bytes::{ByteReader, ByteWriter};
use crate::corpus::ReferenceFrame;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"LTCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub iteration: usize,
    pub val_loss: Option<f64>,
    /// Name prefixes that were frozen.
    pub frozen: Vec<String>,
    /// Symbols of the charset the model was trained with.
    pub charset: Option<String>,
    /// Speaker reference used when no dataset is supplied at inference.
    pub reference: Option<ReferenceFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
}

/// Serializes weights as 32-bit floats.
pub fn save_checkpoint<T: Real>(
    params: &ParamStore<T>,
    config: &ModelConfig,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.raw(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(&serde_json::to_string(config)?);
    w.str(&serde_json::to_string(meta)?);
    w.len_u32(params.len());
    for (name, p) in params.iter() {
        w.str(name);
        w.len_u32(p.value.shape().len());
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        for &v in p.value.data() {
            w.f32(v.as_f64() as f32);
        }
    }
    Ok(w.finish())
}

/// Parses a checkpoint and checks its arrays against the layout its
/// config implies.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Format(format!("checkpoint config block: {e}")))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Format(format!("checkpoint metadata block: {e}")))?;
    let count = r.len()?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.len()?;
        let shape: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
        records.push((name, Array::new(shape, data)?));
    }
    r.finish()?;
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config is invalid: {e}")))?;

    let slots = layout(&config);
    let mut mismatched: Vec<String> = slots
        .iter()
        .filter(|s| {
            !records
                .iter()
                .any(|(n, a)| *n == s.name && a.shape() == s.shape.as_slice())
        })
        .map(|s| s.name.clone())
        .collect();
    mismatched.extend(
        records
            .iter()
            .filter(|(n, _)| !slots.iter().any(|s| &s.name == n))
            .map(|(n, _)| n.clone()),
    );
    if !mismatched.is_empty() {
        return Err(Error::Compatibility {
            message: "arrays do not match the stored config".into(),
            names: mismatched,
        });
    }
    let mut params = ParamStore::new();
    for (name, value) in records {
        let slot = slots.iter().find(|s| s.name == name).expect("checked above");
        if slot.buffer {
            params.insert_buffer(&name, value)?;
        } else {
            params.insert(&name, value)?;
        }
    }
    for prefix in &meta.frozen {
        params.set_frozen_prefix(prefix, true);
    }
    Ok(Checkpoint { params, config, meta })
}

/// Loads a checkpoint that must have been saved with `expected`.
pub fn load_checkpoint_for(bytes: &[u8], expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(bytes)?;
    let diff = ckpt.config.differences(expected);
    if !diff.is_empty() {
        return Err(Error::Compatibility {
            message: "checkpoint config differs from the requested model".into(),
            names: diff,
        });
    }
    Ok(ckpt)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = save_checkpoint(&self.params, &self.config, &self.meta)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        load_checkpoint(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PartialLoadReport {
    /// Names copied from the source.
    pub loaded: Vec<String>,
    /// Names left at their fresh values.
    pub fresh: Vec<String>,
}

/// Copies every array whose name starts with one of `prefixes` from
/// `source` into `target`. Names and shapes must match exactly.
pub fn load_partial<T: Real, U: Real>(
    target: &mut ParamStore<T>,
    source: &ParamStore<U>,
    prefixes: &[&str],
) -> Result<PartialLoadReport> {
    let wanted = |n: &str| prefixes.iter().any(|p| n.starts_with(p));
    let mut bad: Vec<String> = source
        .iter()
        .filter(|(n, _)| wanted(n))
        .filter(|(n, p)| target.get(n).map_or(true, |t| t.value.shape() != p.value.shape()))
        .map(|(n, _)| n.to_string())
        .collect();
    bad.extend(
        target
            .names()
            .filter(|n| wanted(n) && !source.contains(n))
            .map(str::to_string),
    );
    if !bad.is_empty() {
        return Err(Error::Compatibility {
            message: "partial load found missing or reshaped arrays".into(),
            names: bad,
        });
    }
    let mut report = PartialLoadReport::default();
    let names: Vec<String> = target.names().map(str::to_string).collect();
    for name in names {
        if wanted(&name) {
            *target.value_mut(&name)? = source.value(&name)?.cast();
            report.loaded.push(name);
        } else {
            report.fresh.push(name);
        }
    }
    Ok(report)
}
