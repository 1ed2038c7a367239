//! Estimating how much a datapoint's influence changes with its resolution,
//! and training classifiers on mixed-resolution data.

pub mod cli;
pub mod cnn;
pub mod error;
pub mod gibbs;
pub mod influence;
pub mod io;
pub mod mlp;
pub mod rng;
pub mod projection;
pub mod schedule;
pub mod simulation;
pub mod stats;
pub mod svg;
pub mod synth;
pub mod tensor;
pub mod toy;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{LabeledDataset, Tensor};
