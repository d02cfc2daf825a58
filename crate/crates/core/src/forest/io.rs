use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{schema_hash, ForestModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct FileRef<'a> {
    format_version: u32,
    model: &'a ForestModel,
}

#[derive(Deserialize)]
struct FileOwned {
    format_version: u32,
    model: ForestModel,
}

pub fn model_to_string(model: &ForestModel) -> Result<String> {
    serde_json::to_string(&FileRef {
        format_version: MODEL_FORMAT_VERSION,
        model,
    })
    .map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn model_from_str(s: &str) -> Result<ForestModel> {
    let f: FileOwned = serde_json::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if f.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {}", f.format_version)));
    }
    let m = f.model;
    if schema_hash(&m.columns, &m.task) != m.schema_hash {
        return Err(Error::ModelFormat("schema hash does not match columns".into()));
    }
    let (p, k) = (m.columns.len(), m.n_outputs());
    for (t, tree) in m.trees.iter().enumerate() {
        let n = tree.n_nodes();
        let ok = n > 0
            && tree.threshold.len() == n
            && tree.left.len() == n
            && tree.right.len() == n
            && tree.n_samples.len() == n
            && tree.value.len() == n * k
            && tree.importance.len() == p
            && (0..n).all(|i| {
                tree.feature[i] == super::tree::LEAF
                    || ((tree.feature[i] as usize) < p
                        && (tree.left[i] as usize) < n
                        && (tree.right[i] as usize) < n
                        && tree.left[i] as usize > i
                        && tree.right[i] as usize > i)
            });
        if !ok {
            return Err(Error::ModelFormat(format!("tree {t} is malformed")));
        }
    }
    if m.trees.is_empty() {
        return Err(Error::ModelFormat("model has no trees".into()));
    }
    Ok(m)
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&s)
}
