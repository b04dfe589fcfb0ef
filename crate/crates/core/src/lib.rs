//! Region-proposal graphs for video classification: per-clip similarity and
//! spatio-temporal graphs over object proposals, a two-branch graph
//! convolutional classifier, and the tooling to train and evaluate it.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod graphs;
pub mod linalg;
pub mod model;
pub mod regions;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
