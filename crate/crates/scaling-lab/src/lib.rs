//! Scaling laws of diagonal and quadratic two-layer networks through their sparse-estimation equivalents.

pub mod error;
pub mod gamp;
pub mod harness;
pub mod matrix_solvers;
pub mod linalg;
pub mod model_gen;
pub mod rng;
pub mod roots;
pub mod rates;
pub mod special;
pub mod spectra;
pub mod state_evolution;
pub mod vector_solvers;

pub use error::{Error, Result};
