//! From-scratch 3D convnet engine: tensors, layers, loss, optimizer, checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::msle_loss;
pub use model::{Model, Trace};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid target {value} at index {index}: targets must be non-negative")]
    InvalidTarget { index: usize, value: f64 },
    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<NnError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NnError {
    pub(crate) fn shape(context: &str, expected: &[usize], actual: &[usize]) -> Self {
        NnError::Shape {
            context: context.to_string(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
