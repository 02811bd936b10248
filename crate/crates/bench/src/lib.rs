//! Configuration, training runs, agent-count sweeps and reporting on top of
//! `marl-core`.

pub mod compare;
pub mod config;
mod error;
pub mod report;
pub mod sweep;
pub mod train;

pub use error::{BenchError, Result};
