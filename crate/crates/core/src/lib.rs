//! Dual-stream graph-attention / transformer fusion classifier for
//! multi-channel sensor recordings.
//!
//! - [`numerics`]: tensors, reverse-mode tape, Adam, finite-difference checks
//! - [`sensor_graph`]: RBF-kernel adjacency from sensor coordinates
//! - [`data`]: segmentation, normalization, windowing, splits, file formats
//! - [`model`]: the spatial (GAT) and temporal (encoder) streams and fusion head
//! - [`train`]: training, per-subject evaluation and adjacency sweeps

pub mod config;
pub mod data;
mod error;
pub mod model;
pub mod numerics;
pub mod sensor_graph;
pub mod train;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use numerics::Tensor;
