//! Single-process reference chain. It folds adjoint contributions in the
//! order a given decomposition would, which makes it the oracle for the
//! distributed chain.

use std::time::Instant;

use super::checkpoint::{resume_path, Snapshot};
use super::problem::{ChainState, LocalCoupling, Problem};
use super::step::{dual, update_x, update_z_u, TermConsts};
use super::{check_values, ChainOptions, Decomposition, Observer, RunReport};
use crate::error::{Error, Result};
use crate::kernels::NoiseSource;
use crate::linops::{BlockSparseOperator, LinearOperator, SerialAdjoint};

pub struct SerialChain<'p> {
    problem: &'p Problem,
    ops: Vec<&'p BlockSparseOperator>,
    adjoint: SerialAdjoint,
    couplings: Vec<LocalCoupling>,
    consts: Vec<TermConsts>,
    row_offsets: Vec<Vec<usize>>,
    noise: NoiseSource,
    state: ChainState,
    t: u64,
    d: Vec<Vec<f64>>,
    delta: Vec<f64>,
    threshold: f64,
}

impl std::fmt::Debug for SerialChain<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SerialChain")
            .field("t", &self.t)
            .finish_non_exhaustive()
    }
}

impl<'p> SerialChain<'p> {
    /// Chain at state index `t` (number of completed iterations).
    pub fn new(
        problem: &'p Problem,
        decomposition: &Decomposition,
        seed: u64,
        state: ChainState,
        t: u64,
    ) -> Result<Self> {
        problem.validate()?;
        if problem.num_terms() > usize::from(u8::MAX) {
            return Err(Error::InvalidParameter("at most 255 operators".into()));
        }
        let ops = problem.ops();
        let edge_owners: Vec<&[usize]> = decomposition
            .partitions
            .iter()
            .map(|p| p.edge_owner.as_slice())
            .collect();
        let adjoint = SerialAdjoint::new(&ops, decomposition.vertex_owner(), &edge_owners)?;
        let ok = state.x.len() == problem.dim()
            && [&state.v, &state.z, &state.u].iter().all(|w| {
                w.len() == ops.len() && w.iter().zip(&ops).all(|(a, op)| a.len() == op.output_dim())
            });
        if !ok {
            return Err(Error::InvalidParameter(
                "chain state does not match the problem".into(),
            ));
        }
        let couplings = problem
            .terms
            .iter()
            .map(|t| {
                let elems: Vec<u64> = (0..t.op.output_dim() as u64).collect();
                t.g.localize(&elems)
            })
            .collect();
        let d = state.v.iter().map(|v| vec![0.0; v.len()]).collect();
        Ok(Self {
            problem,
            adjoint,
            couplings,
            consts: TermConsts::all(problem),
            row_offsets: (0..ops.len()).map(|i| problem.row_offsets(i)).collect(),
            ops,
            noise: NoiseSource::new(seed),
            delta: vec![0.0; problem.dim()],
            state,
            t,
            d,
            threshold: f64::INFINITY,
        })
    }

    pub fn with_noise(mut self, noise: NoiseSource) -> Self {
        self.noise = noise;
        self
    }

    /// Reports states with magnitude above `threshold` as divergent.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Number of completed iterations.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.t,
            num_workers: 1,
            rank: 0,
            x: self.state.x.clone(),
            z: self.state.z.clone(),
            u: self.state.u.clone(),
        }
    }

    /// Runs iteration `t`, producing state `t + 1`.
    pub fn step(&mut self) -> Result<()> {
        let t = self.t;
        let s = &mut self.state;
        for i in 0..self.ops.len() {
            dual(&self.consts[i], &s.v[i], &s.z[i], &s.u[i], &mut self.d[i]);
        }
        let duals: Vec<&[f64]> = self.d.iter().map(Vec::as_slice).collect();
        self.adjoint.apply_into(&self.ops, &duals, &mut self.delta);
        update_x(self.problem, &self.noise, t, &mut s.x, &self.delta, |j| {
            j as u64
        });
        check_values(&s.x, self.threshold, t, "x", |j| j)?;
        for (i, op) in self.ops.iter().enumerate() {
            op.apply_into(&s.x, &mut s.v[i]);
            let offs = &self.row_offsets[i];
            update_z_u(
                &self.consts[i],
                &self.couplings[i],
                i as u8,
                &self.noise,
                t,
                &s.v[i],
                &mut s.z[i],
                &mut s.u[i],
                offs.windows(2).map(|w| w[0]..w[1]),
                |e| e as u64,
            );
            check_values(&s.z[i], self.threshold, t, &format!("z{}", i + 1), |j| j)?;
            check_values(&s.u[i], self.threshold, t, &format!("u{}", i + 1), |j| j)?;
        }
        self.t += 1;
        Ok(())
    }
}

/// Runs the reference chain from the problem's initial state, or from a
/// snapshot when `options.resume_from` is set.
pub fn run_serial(
    problem: &Problem,
    decomposition: &Decomposition,
    options: &ChainOptions,
    observer: &mut dyn Observer,
) -> Result<RunReport> {
    let (state, t0) = match &options.resume_from {
        None => (problem.initial_state()?, 0),
        Some(dir) => {
            let snap = Snapshot::read(&resume_path(dir, 1, 0))?;
            let lens: Vec<usize> = problem.terms.iter().map(|t| t.op.output_dim()).collect();
            snap.check(1, 0, problem.dim(), &lens)?;
            let v = problem
                .terms
                .iter()
                .map(|t| t.op.apply(&snap.x))
                .collect::<Result<_>>()?;
            (
                ChainState {
                    x: snap.x,
                    v,
                    z: snap.z,
                    u: snap.u,
                },
                snap.t,
            )
        }
    };
    let mut chain = SerialChain::new(problem, decomposition, options.seed, state, t0)?
        .with_threshold(options.divergence_threshold)
        .with_noise(options.noise());
    if t0 == 0 {
        observer.initial(chain.state())?;
    }
    let mut report = RunReport {
        start: t0,
        ..RunReport::default()
    };
    while chain.t() < options.iterations {
        let started = Instant::now();
        chain.step()?;
        let secs = started.elapsed().as_secs_f64();
        report.iter_seconds.push(secs);
        report.iterations += 1;
        observer.observe(chain.t() - 1, chain.state(), secs)?;
        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && chain.t() % options.checkpoint_every == 0 {
                chain.snapshot().write(&resume_path(dir, 1, 0))?;
                observer.checkpoint(chain.t())?;
            }
        }
    }
    Ok(report)
}
