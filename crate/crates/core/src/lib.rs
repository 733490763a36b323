pub mod autodiff;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod experiment;
mod fsutil;
pub mod label;
pub mod model;
pub mod rng;
mod scalar;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Network = model::Network<f64>;
pub type Network32 = model::Network<f32>;
