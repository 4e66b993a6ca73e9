//! Near-field CSI feedback: channel synthesis, NEFT models, knowledge
//! distillation, training and complexity accounting.

pub mod channel;
pub mod complexity;
pub mod error;
mod framed;
pub mod models;

pub use error::{NeftError, Result};
pub mod metrics;
pub mod optimizer;
pub mod schedule;
pub mod trainer;
pub mod distill;
