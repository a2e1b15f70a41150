//! Sparse hypercolumn pixel prediction: a small CNN backbone, on-demand
//! bilinear feature sampling, an MLP predictor, training and evaluation.

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod heads;
pub mod hypercolumn;
pub mod infer;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
