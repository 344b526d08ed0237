//! Checkpoints: `<stem>.safetensors` with every registered tensor plus `<stem>.json` holding
//! the model configuration and a name/shape/dtype manifest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const FORMAT: &str = "mffn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub dtype: String,
    /// Epoch the weights were taken at, if saved during training.
    pub epoch: Option<usize>,
    pub model: ModelConfig,
    pub tensors: Vec<ManifestEntry>,
}

/// Accepts `stem`, `stem.json` or `stem.safetensors`.
pub fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "safetensors") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn dtype_name(dtype: DType) -> &'static str {
    dtype.as_str()
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::CheckpointMismatch(format!("unsupported dtype `{other}`"))),
    }
}

/// Writes both files and returns the stem.
pub fn save(ps: &ParamStore, config: &ModelConfig, path: &Path, epoch: Option<usize>) -> Result<PathBuf> {
    let stem = stem_of(path);
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tensors = ps.tensors();
    let manifest = ps
        .params()
        .iter()
        .map(|p| ManifestEntry {
            name: p.name.clone(),
            shape: p.var.dims().to_vec(),
            dtype: dtype_name(p.var.dtype()).into(),
        })
        .collect();
    // Pretrained weights are already baked into the tensors.
    let mut model = config.clone();
    model.encoder.weights = None;
    let meta = CheckpointMeta { format: FORMAT.into(), dtype: dtype_name(ps.dtype()).into(), epoch, model, tensors: manifest };
    candle_core::safetensors::save(&tensors, with_ext(&stem, "safetensors"))?;
    std::fs::write(with_ext(&stem, "json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(stem)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let json = with_ext(&stem_of(path), "json");
    let text = std::fs::read_to_string(&json)
        .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", json.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", json.display())))?;
    if meta.format != FORMAT {
        return Err(Error::CheckpointMismatch(format!("unknown format `{}`", meta.format)));
    }
    Ok(meta)
}

/// Rebuilds the model described by the checkpoint and copies its tensors in.
pub fn load(path: &Path) -> Result<(ParamStore, Model, CheckpointMeta)> {
    let stem = stem_of(path);
    let meta = read_meta(&stem)?;
    let dtype = parse_dtype(&meta.dtype)?;
    let file = with_ext(&stem, "safetensors");
    let tensors: HashMap<_, _> = candle_core::safetensors::load(&file, &Device::Cpu)
        .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", file.display())))?;
    let mut ps = ParamStore::shape_only(dtype);
    let model = Model::new(&mut ps, &meta.model)?;
    if tensors.len() != ps.params().len() {
        return Err(Error::CheckpointMismatch(format!(
            "file holds {} tensors, model has {}",
            tensors.len(),
            ps.params().len()
        )));
    }
    for p in ps.params() {
        let t = tensors.get(&p.name).ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor `{}`", p.name)))?;
        if t.dims() != p.var.dims() {
            return Err(Error::CheckpointMismatch(format!(
                "`{}` has shape {:?}, expected {:?}",
                p.name,
                t.dims(),
                p.var.dims()
            )));
        }
        p.var.set(&t.to_dtype(dtype)?)?;
    }
    Ok((ps, model, meta))
}
