//! A training laboratory for adversarial suppression of identity features
//! (ASIF).
//!
//! A feature extractor feeds both a class head and a per-class sample
//! identifier. The identifier sees the features through a dynamic gradient
//! reversal layer whose coefficient is driven towards the point where the
//! identifier can do no better than chance, so the extractor is pushed away
//! from features that single out individual training samples.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which the harness uses.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{AsifError, Result};
pub use rng::RngStream;
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type AsifModel64 = model::AsifModel<f64>;
pub type AsifModel32 = model::AsifModel<f32>;
pub type Trainer64 = model::Trainer<f64>;
