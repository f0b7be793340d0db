//! Quarterly sales forecasting with a CNN-LSTM network and three baselines.
//!
//! Every layer carries a hand-derived backward pass that is checked against
//! central finite differences in the test suite.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod param;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use param::ParamTensor;
pub use rng::RngStream;
pub use tensor::Tensor;
