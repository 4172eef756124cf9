//! Error types shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor shapes, naming both sides.
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Stripe or convolution geometry that cannot be realized.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Batch too small for the requested operation (e.g. batch-norm statistics).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// Caller violated an operation contract (bad label, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A batch label has no corresponding class center.
    #[error("no class center for label {label} (have {num_classes})")]
    MissingCenter { label: usize, num_classes: usize },

    /// Filename does not follow the dataset naming convention.
    #[error("unparsable image filename: {0:?}")]
    Parse(String),

    /// Dataset directory layout is not the expected one.
    #[error("dataset layout error: missing {0}")]
    Layout(PathBuf),

    #[error("empty dataset: no parsable images under {0}")]
    EmptyDataset(PathBuf),

    /// Every query was excluded from scoring.
    #[error("evaluation produced no scorable queries")]
    EmptyEvaluation,

    /// Bad run configuration or impossible synthetic-dataset spec.
    #[error("config error: {0}")]
    Config(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    /// Non-finite value surfaced during training.
    #[error("numeric divergence in {0}")]
    Divergence(String),

    /// Malformed binary file (magic, version, truncation).
    #[error("file format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::ShapeMismatch { .. } => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
