//! Simulation and numerical verification of decentralized self-supervised
//! learning on non-IID data sources.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the verification oracles
//! and the command-line runner use.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod eval;
pub mod featarc;
pub mod fedsim;
pub mod linalg;
pub mod objectives;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Encoder64 = objectives::LinearEncoder<f64>;
pub type Dataset64 = datagen::LocalDataset<f64>;
pub type Trace64 = fedsim::TrainingTrace<f64>;
pub type ClusterState64 = featarc::ClusterState<f64>;

pub type Matrix32 = Matrix<f32>;
pub type Encoder32 = objectives::LinearEncoder<f32>;
pub type Dataset32 = datagen::LocalDataset<f32>;
