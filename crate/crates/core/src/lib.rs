//! Encoder-decoder neural machine translation with a gated recurrent encoder
//! and a gated recursive convolutional (grConv) encoder.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what the command-line tool and the test suites use.

pub mod beamsearch;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod dot;
pub mod error;
pub mod eval;
pub mod grconv;
pub mod gru;
pub mod model;
pub mod model_file;
pub mod numerics;
pub mod params;
pub mod scalar;
pub mod structure;
pub mod training;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Model64 = model::Seq2Seq<f64>;
pub type Model32 = model::Seq2Seq<f32>;
pub type GateRecord64 = grconv::GateRecord<f64>;
