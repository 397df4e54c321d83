//! Simulation, poisoning, and measurement-clustering detection for small
//! variational quantum classifiers.

pub mod attacks;
pub mod data;
pub mod detector;
pub mod error;
pub mod model;
pub mod metrics;
pub mod rng;
pub mod statevector;

pub use error::{Error, Result};
