//! Multi-resolution overlapping-stripe (MROS) person re-identification:
//! a part-based embedding model pooling adjacent feature-map stripes at two
//! backbone resolutions, trained with batch-hard triplet, center and
//! label-smoothed cross-entropy losses, plus the single-query mAP/CMC
//! retrieval evaluator used to score it.

pub mod autodiff;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
