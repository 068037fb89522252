//! Gradient-free ensemble transform Langevin dynamics (GF-ETLD) for
//! generalized Bayesian inference with the maximum mean discrepancy.

pub mod baselines;
pub mod ensemble;
pub mod experiment;
pub mod error;
pub mod kernel;
pub mod models;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
