//! Experiment runner library behind the `qsentry` binary: configuration,
//! per-cell orchestration, artifact persistence, and table rendering.

pub mod artifacts;
pub mod config;
pub mod experiment;
pub mod tables;
