//! Deep speaker-embedding training and verification, end to end: a small
//! reverse-mode autodiff engine, TDNN/BLSTM front-ends with multi-level
//! statistical pooling, embedding-norm regularized training, and an
//! LDA + PLDA scoring backend with EER/minDCF evaluation.

pub mod backend;
pub mod container;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
