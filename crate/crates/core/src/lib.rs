//! Multilayer perceptrons whose feedforward and backpropagation are written
//! directly as batch matrix equations.
//!
//! Every layer stores its input `X`, produces `Y`, and later turns the output
//! gradient `DY` into `DX` plus parameter gradients with a handful of matrix
//! products. Nothing is differentiated automatically; [`gradcheck`] verifies
//! the hand-written gradients against finite differences.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod error;
pub mod functions;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod network;
pub mod optimize;
mod parse;
pub mod sparse;

pub use error::{Error, Result, Shape};
pub use functions::Activation;
pub use layers::{Layer, LayerKind};
pub use loss::LossFunction;
pub use matrix::{Fill, Matrix};
pub use network::{Dataset, EpochMetrics, Evaluation, Mlp, TrainOptions};
pub use optimize::{OptimizerKind, Scheduler, WeightInit};
pub use sparse::CsrMatrix;
