//! Small feedforward classifier with exact gradients.
//!
//! Hidden layers use a rectifier, the output layer is linear and produces
//! logits. Three losses cover the knowledge-transfer modes: hard-label
//! cross-entropy, soft-label cross-entropy and mean squared error on logits.

mod checkpoint;
pub mod gradcheck;
mod knowledge;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use checkpoint::CheckpointError;
pub use knowledge::{argmax, predict_knowledge, KnowledgeMode, KnowledgeVector};
pub use loss::{evaluate_loss, loss_and_grad, output_gradient, Batch, LossKind, Targets};
pub use model::{init_model, log_softmax_row, softmax, softmax_rows, DenseLayer, MlpModel};
pub use train::{accuracy, train, TrainReport, TrainSpec, TrainingSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("a model needs at least two layer dimensions (got {0})")]
    TooFewDims(usize),
    #[error("layer dimension {index} is zero")]
    ZeroDim { index: usize },
    #[error("input width {got} does not match the model input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("batch has {inputs} input rows but {targets} target rows")]
    RowMismatch { inputs: usize, targets: usize },
    #[error("target width {got} does not match the model's {expected} classes")]
    TargetWidth { expected: usize, got: usize },
    #[error("hard label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("soft-label row {row} is not on the probability simplex")]
    NotOnSimplex { row: usize },
    #[error("loss {loss:?} needs {expected} targets")]
    TargetKind { loss: LossKind, expected: &'static str },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training spec: {0}")]
    InvalidSpec(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite parameters after epoch {epoch}, batch {batch}")]
    NonFiniteParameters { epoch: usize, batch: usize },
}
