//! NEFT encoder/decoder variants built on the tensor tape.

mod checkpoint;
mod config;
pub mod layers;
mod model;
mod topology;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{NeftConfig, Variant, DEFAULT_INPUT};
pub use model::{AttentionRecord, ForwardMode, ForwardPass, Inference, Model, INIT_STD};
pub use topology::{param_count, topology, Init, Layer, LayerKind, Part, TensorSpec};
