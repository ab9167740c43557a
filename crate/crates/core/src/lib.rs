//! Adaptive monotone triangular transport maps and a two-phase sequential
//! simulation-based inference engine.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod cost;
pub mod density;
pub mod error;
pub mod indexset;
pub mod optim;
pub mod polybasis;
pub mod models;
pub mod quadrature;
pub mod sbi;
pub mod seeds;
pub mod stats;
pub mod tabular;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
