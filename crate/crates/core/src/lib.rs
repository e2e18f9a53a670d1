//! Graph neural networks for node classification with two message-passing
//! extensions: MaxPool-matched residual shortcuts and learnable per-edge
//! aggregation gates, alongside plain GCN-style and PMLP baselines.

pub mod check;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use graph::Graph;
pub use rng::RngStream;
