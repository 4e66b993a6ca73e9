//! Versioned checkpoint: framed JSON header (config, manifest, free-form
//! metadata) followed by the raw parameter and buffer payload.

use std::path::Path;

use indexmap::IndexMap;
use neft_tensor::{DType, Element, Tensor};
use serde::{Deserialize, Serialize};

use super::config::NeftConfig;
use super::model::Model;
use crate::error::{NeftError, Result};
use crate::framed;

const FORMAT: &str = "neft-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: DType,
    config: NeftConfig,
    manifest: Vec<ManifestEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A loaded model plus whatever metadata was stored alongside it.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Element> {
    pub model: Model<T>,
    pub dtype: DType,
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint<T: Element>(model: &Model<T>, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (kind, map) in [(EntryKind::Param, model.params()), (EntryKind::Buffer, model.buffers())] {
        for (name, t) in map {
            manifest.push(ManifestEntry { name: name.clone(), kind, shape: t.shape().to_vec(), offset });
            offset += t.numel();
            framed::encode(t.data().iter().copied(), &mut payload);
        }
    }
    let header = Header { format: FORMAT.into(), version: VERSION, dtype: T::DTYPE, config: model.config().clone(), manifest, metadata };
    framed::write(path, &header, &payload)
}

/// Reads a checkpoint into precision `T`, validating every tensor against
/// the topology implied by the stored config.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let (header, payload): (Header, _) = framed::read(path)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(NeftError::Format(format!(
            "{} is not a version-{VERSION} checkpoint (format `{}`, version {})",
            path.display(),
            header.format,
            header.version
        )));
    }
    let values = framed::decode_f64(&payload, header.dtype)?;
    let mut params = IndexMap::new();
    let mut buffers = IndexMap::new();
    for e in &header.manifest {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| NeftError::Format(format!("tensor `{}` runs past the end of the payload", e.name)))?;
        let t = Tensor::new(e.shape.clone(), data.iter().map(|&v| T::cast(v)).collect())?;
        let target = if e.kind == EntryKind::Param { &mut params } else { &mut buffers };
        target.insert(e.name.clone(), t);
    }
    let model = Model::from_parts(header.config, params, buffers)?;
    Ok(Checkpoint { model, dtype: header.dtype, metadata: header.metadata })
}
