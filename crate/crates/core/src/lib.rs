//! Optimal quantization of measures on model manifolds: Euclidean space,
//! round spheres and hyperbolic space.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod measures;
pub mod parallel;
pub mod polar;
pub mod quant1d;
pub mod quantizer;
pub mod transport;

pub use error::{QuantError, Result};
