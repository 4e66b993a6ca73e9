mod data;
mod inspect;
mod run;

use std::path::Path;

use anyhow::{Context, Result};
use neft_core::channel::ChannelDataset;
use neft_core::models::{load_checkpoint, Model};
use neft_tensor::DType;

pub use data::gen_data;
pub use inspect::{compare, eval, export_attn, flops};
pub use run::{distill, train};

/// A checkpoint in its stored precision.
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    pub fn config(&self) -> &neft_core::models::NeftConfig {
        match self {
            AnyModel::F32(m) => m.config(),
            AnyModel::F64(m) => m.config(),
        }
    }
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let ckpt = load_checkpoint::<f64>(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(match ckpt.dtype {
        DType::F32 => AnyModel::F32(ckpt.model.cast()),
        DType::F64 => AnyModel::F64(ckpt.model),
    })
}

pub fn load_data(path: &Path) -> Result<ChannelDataset> {
    ChannelDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}
