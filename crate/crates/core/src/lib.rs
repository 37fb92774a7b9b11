//! Spatio-temporal node-attention graph classification.
//!
//! The crate turns multivariate time series into sequences of graph
//! snapshots, classifies them with a graph-convolution stack followed by
//! global self-attention over every (snapshot, node) pair, and explains the
//! resulting predictions with a learned node mask.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod graphbuild;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
