//! Checkpoint directories: `checkpoint.json` plus one tensor file per
//! parameter, named after the parameter (`encoder.l1.weight.c2at`, ...).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{C2aModel, ModelConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::layers::Parameterized;
use crate::tensor::Tensor;

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: C2aModel,
    /// Completed optimizer steps.
    pub iter: u64,
    /// Non-parameter tensors (e.g. `pca.projection`, `pca.mean`).
    pub extras: BTreeMap<String, Tensor>,
    /// Free-form metadata such as the training config.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: C2aModel, iter: u64) -> Self {
        Checkpoint {
            model,
            iter,
            extras: BTreeMap::new(),
            meta: serde_json::Value::Null,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    iter: u64,
    model: ModelConfig,
    params: BTreeMap<String, String>,
    extras: BTreeMap<String, String>,
    meta: serde_json::Value,
}

fn file_name(name: &str) -> String {
    format!("{name}.c2at")
}

pub fn write_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut model = ckpt.model.clone();
    let mut params = BTreeMap::new();
    for p in model.params() {
        io::write_tensor_file(dir.join(file_name(&p.name)), p.value)?;
        params.insert(p.name.clone(), file_name(&p.name));
    }
    let mut extras = BTreeMap::new();
    for (name, t) in &ckpt.extras {
        io::write_tensor_file(dir.join(file_name(name)), t)?;
        extras.insert(name.clone(), file_name(name));
    }
    let manifest = Manifest {
        format: "c2a-checkpoint".into(),
        version: 1,
        iter: ckpt.iter,
        model: ckpt.model.config.clone(),
        params,
        extras,
        meta: ckpt.meta.clone(),
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != 1 {
        return Err(Error::VersionMismatch(manifest.version));
    }
    let mut model = C2aModel::new(manifest.model, 0)?;
    for p in model.params() {
        let file = manifest
            .params
            .get(&p.name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint is missing parameter {}", p.name)))?;
        let t = io::read_tensor_file(dir.join(file))?;
        if t.dims() != p.value.dims() {
            return Err(Error::shape("read_checkpoint", p.value.dims(), t.dims()));
        }
        *p.value = t;
    }
    let extras = manifest
        .extras
        .iter()
        .map(|(name, file)| Ok((name.clone(), io::read_tensor_file(dir.join(file))?)))
        .collect::<Result<_>>()?;
    Ok(Checkpoint {
        model,
        iter: manifest.iter,
        extras,
        meta: manifest.meta,
    })
}
