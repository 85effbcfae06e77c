//! Sequential Monte Carlo with Gaussian-mixture mutation kernels for
//! Bayesian inverse problems on function spaces.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod function_space;
pub mod kernels;
mod math;
pub mod mixture;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
