//! Experiment runner for Poisson deconvolution with the distributed Gibbs
//! sampler: data generation, chain runs with summary outputs, serial versus
//! distributed trajectory checks and scaling benchmarks.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
