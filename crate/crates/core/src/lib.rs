//! Pedestrian trajectory forecasting with convolutional and recurrent
//! predictors on a small reverse-mode differentiation engine.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod ndmath;
pub mod prep;
pub mod scalar;
pub mod social;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type NdArray32 = ndmath::NdArray<f32>;
pub type NdArray64 = ndmath::NdArray<f64>;
pub type Graph32 = ndmath::Graph<f32>;
pub type Graph64 = ndmath::Graph<f64>;
