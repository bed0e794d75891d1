//! Distributed split-and-augment Gibbs sampling over hypergraph-partitioned
//! linear operators.
//!
//! The crate is organized bottom-up: [`hypergraph`] derives the worker index
//! sets of a block-sparse operator, [`linops`] applies operators globally and
//! per worker, [`kernels`] holds the sampling primitives, [`transport`] moves
//! frames between ranks, [`sampler`] runs serial and distributed chains,
//! [`stats`] summarizes them and [`deconv`] wires the Poisson deconvolution
//! problem.

pub mod deconv;
pub mod error;
pub mod hypergraph;
pub mod kernels;
pub mod linops;
pub mod sampler;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
