#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod classifier;
pub mod datasets;
pub mod engine;
pub mod harness;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
