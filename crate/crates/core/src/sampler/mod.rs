//! Gibbs chains over the augmented target: a serial reference chain and the
//! SPMD distributed chain. Both draw noise from the same counter-based
//! streams and aggregate adjoint contributions in the same order, so their
//! trajectories agree bit for bit.

mod checkpoint;
mod distributed;
mod problem;
mod serial;
mod step;

pub use checkpoint::{resume_path, Snapshot};
pub use distributed::{run_distributed, run_inproc, run_worker, StateAssembler};
pub use problem::{ChainState, Coupling, Init, LocalCoupling, PriorF, Problem, SmoothH, Term};
pub use serial::{run_serial, SerialChain};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::hypergraph::{build_partition, HypergraphPartition};
use crate::kernels::NoiseSource;
use crate::transport::GridGeometry;

/// Vertex and hyperedge ownership for every operator of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub partitions: Vec<HypergraphPartition>,
}

impl Decomposition {
    pub fn new(
        problem: &Problem,
        num_workers: usize,
        vertex_owner: &[usize],
        edge_owners: &[Vec<usize>],
    ) -> Result<Self> {
        if edge_owners.len() != problem.num_terms() {
            return Err(Error::InvalidOwnerMap(format!(
                "{} edge owner maps for {} operators",
                edge_owners.len(),
                problem.num_terms()
            )));
        }
        let partitions = problem
            .terms
            .iter()
            .zip(edge_owners)
            .map(|(t, eo)| build_partition(t.op.structure(), num_workers, vertex_owner, eo))
            .collect::<Result<_>>()?;
        Ok(Self { partitions })
    }

    /// Everything on one worker.
    pub fn single(problem: &Problem) -> Result<Self> {
        let n = problem.terms[0].op.structure().num_vertices();
        let owners: Vec<Vec<usize>> = problem
            .terms
            .iter()
            .map(|t| vec![0; t.op.structure().num_edges()])
            .collect();
        Self::new(problem, 1, &vec![0; n], &owners)
    }

    pub fn num_workers(&self) -> usize {
        self.partitions[0].num_workers
    }

    pub fn vertex_owner(&self) -> &[usize] {
        &self.partitions[0].vertex_owner
    }

    pub fn partition_refs(&self) -> Vec<&HypergraphPartition> {
        self.partitions.iter().collect()
    }
}

/// Order in which a worker folds adjoint contributions into its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationOrder {
    /// Own hyperedges by ascending index, then neighbor partials by ascending rank.
    #[default]
    Canonical,
    /// Neighbor partials by descending rank first, then own hyperedges in
    /// descending order. Exists to show the equivalence check is sensitive.
    Reversed,
}

/// How vertex halos travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HaloStrategy {
    /// One message per neighbor with exactly the needed vertices.
    #[default]
    Generic,
    /// Horizontal then vertical strips on an image tile grid.
    Grid(GridGeometry),
}

/// What rank 0 collects from the workers after each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatherMode {
    /// Nothing; the observer is never called.
    None,
    /// `x` and `v_i`, enough for estimators and the potential.
    #[default]
    Sample,
    /// The whole augmented state.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub iterations: u64,
    pub seed: u64,
    /// States with a magnitude above this are reported as divergent.
    pub divergence_threshold: f64,
    pub gather: GatherMode,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
    pub aggregation: AggregationOrder,
    pub halo: HaloStrategy,
    pub config_hash: u64,
    /// Replaces every Gaussian draw by zero (deterministic test runs).
    pub zero_noise: bool,
}

impl ChainOptions {
    pub(crate) fn noise(&self) -> NoiseSource {
        if self.zero_noise {
            NoiseSource::silent(self.seed)
        } else {
            NoiseSource::new(self.seed)
        }
    }
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            iterations: 0,
            seed: 0,
            divergence_threshold: 1e12,
            gather: GatherMode::Sample,
            checkpoint_every: 0,
            checkpoint_dir: None,
            resume_from: None,
            aggregation: AggregationOrder::Canonical,
            halo: HaloStrategy::Generic,
            config_hash: 0,
            zero_noise: false,
        }
    }
}

/// Receives chain states in global indexing.
pub trait Observer {
    /// State before the first iteration; not called when resuming.
    fn initial(&mut self, _state: &ChainState) -> Result<()> {
        Ok(())
    }

    /// State produced by zero-based iteration `iteration`, with the
    /// iteration's wall time.
    fn observe(&mut self, iteration: u64, state: &ChainState, seconds: f64) -> Result<()>;

    /// Called once snapshots for state index `t` are on disk.
    fn checkpoint(&mut self, _t: u64) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
#[derive(Debug, Default)]
pub struct NullObserver;

impl Observer for NullObserver {
    fn observe(&mut self, _: u64, _: &ChainState, _: f64) -> Result<()> {
        Ok(())
    }
}

/// Observer that keeps every state.
#[derive(Debug, Default)]
pub struct Recorder {
    pub initial: Option<ChainState>,
    pub states: Vec<ChainState>,
}

impl Observer for Recorder {
    fn initial(&mut self, state: &ChainState) -> Result<()> {
        self.initial = Some(state.clone());
        Ok(())
    }

    fn observe(&mut self, _: u64, state: &ChainState, _: f64) -> Result<()> {
        self.states.push(state.clone());
        Ok(())
    }
}

/// Outcome of a chain run, as seen by rank 0 (or the serial chain).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub start: u64,
    pub iterations: u64,
    /// Wall time of each iteration, communication included, observer excluded.
    pub iter_seconds: Vec<f64>,
}

/// Checks that every value is finite and below `threshold` in magnitude.
pub(crate) fn check_values(
    values: &[f64],
    threshold: f64,
    iteration: u64,
    variable: &str,
    global: impl Fn(usize) -> usize,
) -> Result<()> {
    match values.iter().position(|v| !(v.abs() <= threshold)) {
        None => Ok(()),
        Some(j) => Err(Error::NonFiniteState {
            iteration,
            variable: variable.to_string(),
            index: global(j),
            value: values[j],
        }),
    }
}

/// First difference between two states, as `(variable, index)`.
pub fn first_difference(a: &ChainState, b: &ChainState) -> Option<(String, usize)> {
    fn diff(a: &[f64], b: &[f64]) -> Option<usize> {
        if a.len() != b.len() {
            return Some(a.len().min(b.len()));
        }
        a.iter()
            .zip(b)
            .position(|(x, y)| x.to_bits() != y.to_bits())
    }
    if let Some(j) = diff(&a.x, &b.x) {
        return Some(("x".into(), j));
    }
    for (name, va, vb) in [("v", &a.v, &b.v), ("z", &a.z, &b.z), ("u", &a.u, &b.u)] {
        if va.len() != vb.len() {
            return Some((name.into(), 0));
        }
        for (i, (p, q)) in va.iter().zip(vb).enumerate() {
            if let Some(j) = diff(p, q) {
                return Some((format!("{name}{}", i + 1), j));
            }
        }
    }
    None
}
