//! Prequential scoring of feature representations.
//!
//! The pipeline turns a fixed feature sequence into a per-step loss matrix
//! by training a population of readout experts online (stage 1), then
//! compresses that matrix into a single codelength under an
//! expert-switching prior (stage 2). Lower codelength means the features
//! support better online prediction of the labels.

pub mod error;
pub mod expfam;
pub mod files;
pub mod math;
pub mod ranking;
pub mod readout;
pub mod report;
pub mod switching;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
