//! Human activity recognition on motion-capture time series.
//!
//! The crate covers the whole pipeline: ingesting plain-text recordings
//! from a dataset tree, slicing them into normalized fixed-length windows,
//! a from-scratch depthwise-separable 1D CNN with hand-written backward
//! passes, Adam/SGD training, and confusion-matrix evaluation. Everything
//! downstream of the single run seed is deterministic, and every backward
//! pass is verifiable against finite differences.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
