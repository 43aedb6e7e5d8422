//! Compact CNN classifier: forward/backward passes, Adam training,
//! evaluation metrics, multi-run aggregation and checkpoints.

mod checkpoint;
mod gradcheck;
mod metrics;
mod network;
mod train;

use std::path::PathBuf;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, GradCheckReport, TensorCheck};
pub use metrics::{aggregate_runs, evaluate, Aggregate, MeanStd, RunMetrics};
pub use network::{
    argmax, batch_loss, batch_loss_with, cross_entropy, forward, forward_with, loss_and_grad, loss_and_grad_with,
    predictions, softmax, ConvLayer, ModelParams, Workspace, ARCHITECTURE, CONV_CHANNELS, INPUT_SHAPE, NUM_CLASSES,
    TENSOR_NAMES,
};
pub use train::{history_csv, predict, train, Adam, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("input shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{windows} windows but {labels} labels")]
    LabelCount { windows: usize, labels: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("aggregation needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("{path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
