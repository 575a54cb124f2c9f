//! A from-scratch CNN training and inference engine for 3-class potato
//! leaf disease classification: data pipeline, five-convolution-layer
//! network, Adam training loop, evaluation and prediction.

pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod model_io;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
