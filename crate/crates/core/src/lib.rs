//! Particle simulation and generalization analysis for KL-regularized
//! transfer learning with mean-field one-hidden-layer networks.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod measures;
pub mod mfnet;
pub mod objective;
pub mod priors;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
