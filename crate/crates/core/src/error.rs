use neft_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeftError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index out of range: {what} = {index}, limit {limit}")]
    Bounds { what: &'static str, index: usize, limit: usize },
    #[error("singular geometry: {0}")]
    Singularity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("distillation compatibility: {0}")]
    Compatibility(String),
    #[error("non-finite gradient in parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}; parameters restored to the last good state")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NeftError> = std::result::Result<T, E>;
