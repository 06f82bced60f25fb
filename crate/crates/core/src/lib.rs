//! Randomized block Gauss-Seidel and its accelerated variants for dense SPD
//! systems, with exact and Monte-Carlo tools for the constants `μ` and `ν`
//! that govern their rates.

pub mod constants;
pub mod error;
pub mod harness;
pub mod krr;
pub mod linalg;
pub mod matrices;
pub mod rng;
pub mod sketch;
pub mod solvers;

pub use error::{Error, Result};
