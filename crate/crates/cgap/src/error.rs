//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors or layers disagree on a dimension. `context` names the
    /// operation and both sides of the mismatch.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("layer {layer}: {reason}")]
    InvalidLayerOp { layer: usize, reason: String },

    #[error("unit {unit} out of range for layer {layer} (width {width})")]
    UnitOutOfRange {
        layer: usize,
        unit: usize,
        width: usize,
    },

    #[error("refusing to remove the last remaining unit of layer {layer}")]
    LayerCollapse { layer: usize },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("gradients missing for layer {layer}; run backward first")]
    MissingGradients { layer: usize },

    #[error(
        "saliency table is stale: built for topology version {table_version}, \
         current version is {current_version}"
    )]
    StaleTable {
        table_version: u64,
        current_version: u64,
    },

    #[error("saliency accumulation window is empty")]
    EmptyWindow,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("growth capacity reached: next first-layer width {next} exceeds limit {limit}")]
    CapacityReached { next: usize, limit: usize },

    #[error("k={k} out of range for {len} scores")]
    TopKOutOfRange { k: usize, len: usize },

    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("idx data error in {file}: {reason}")]
    Idx { file: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
