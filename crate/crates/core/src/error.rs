use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EbmError>;

#[derive(Debug, Error)]
pub enum EbmError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("layer {layer}: {message}")]
    LayerShape { layer: usize, message: String },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("empty batch passed to {context}")]
    EmptyBatch { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid norm order {0}: only 1 and 2 are supported")]
    InvalidNorm(u32),

    #[error("SGLD chain {chain} diverged at step {step} (energy {energy})")]
    SamplerDiverged {
        chain: usize,
        step: usize,
        energy: f64,
    },

    #[error(
        "training diverged at iteration {iteration}: mean energy {energy} exceeds guard {guard}"
    )]
    TrainingDiverged {
        iteration: usize,
        energy: f64,
        guard: f64,
    },

    #[error("AUROC needs both classes: {positives} positive and {negatives} negative samples")]
    SingleClass { positives: usize, negatives: usize },

    #[error("invalid {what} file: {message}")]
    Format { what: &'static str, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EbmError {
    /// Short machine-readable category used in CLI error lines and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            EbmError::ShapeMismatch { .. } | EbmError::LayerShape { .. } => "shape_mismatch",
            EbmError::NonFinite { .. } => "non_finite",
            EbmError::EmptyBatch { .. } => "empty_batch",
            EbmError::InvalidConfig(_) | EbmError::InvalidNorm(_) => "invalid_argument",
            EbmError::SamplerDiverged { .. } | EbmError::TrainingDiverged { .. } => "diverged",
            EbmError::SingleClass { .. } => "single_class",
            EbmError::Format { .. } => "format",
            EbmError::Dataset(_) => "dataset",
            EbmError::Image { .. } => "image",
            EbmError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EbmError::Io {
            path: path.into(),
            source,
        }
    }
}
