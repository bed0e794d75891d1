//! SPMD chain: each worker owns a vertex block of `x` and the hyperedge
//! blocks of every `z_i`, `u_i` assigned to it, and talks to its neighbors
//! through an [`Endpoint`].

use std::collections::BTreeMap;
use std::time::Instant;

use super::checkpoint::{resume_path, Snapshot};
use super::problem::{ChainState, LocalCoupling, Problem};
use super::step::{dual, update_x, update_z_u, TermConsts};
use super::{
    check_values, AggregationOrder, ChainOptions, Decomposition, GatherMode, HaloStrategy,
    Observer, RunReport,
};
use crate::error::{Error, Result};
use crate::kernels::NoiseSource;
use crate::linops::{LocalOperator, WorkerLayout};
use crate::transport::{
    grid_halo_exchange, inproc_endpoints, Endpoint, GridGeometry, ALL_OPERATORS,
};

struct TermWorker {
    local: LocalOperator,
    g: LocalCoupling,
    elems: Vec<u64>,
    v: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
}

struct GridHalo {
    geometry: GridGeometry,
    /// (position in the extended vector, index in the extended tile)
    place: Vec<(usize, usize)>,
}

struct Worker<'p> {
    problem: &'p Problem,
    rank: usize,
    num_workers: usize,
    terms: Vec<TermWorker>,
    consts: Vec<TermConsts>,
    x_elems: Vec<u64>,
    owned: usize,
    x_ext: Vec<f64>,
    halo_send: BTreeMap<usize, Vec<usize>>,
    halo_recv: BTreeMap<usize, Vec<usize>>,
    grid: Option<GridHalo>,
    partial_neighbors: Vec<usize>,
    own: Vec<f64>,
    partials: Vec<Vec<f64>>,
    adj_recv: BTreeMap<usize, Vec<usize>>,
    delta: Vec<f64>,
    aggregation: AggregationOrder,
    noise: NoiseSource,
    threshold: f64,
}

fn expected_lens(m: &BTreeMap<usize, Vec<usize>>) -> BTreeMap<usize, usize> {
    m.iter().map(|(&k, p)| (k, p.len())).collect()
}

/// Global element indices of the owned `x` block and of each operator's
/// local output, for worker `rank`.
fn element_maps(
    problem: &Problem,
    decomposition: &Decomposition,
    rank: usize,
) -> (Vec<u64>, Vec<Vec<u64>>) {
    let op0 = &problem.terms[0].op;
    let dims = op0.structure().col_dims();
    let x: Vec<u64> = decomposition.partitions[0]
        .worker(rank)
        .vertices
        .iter()
        .flat_map(|&n| (op0.col_offset(n)..op0.col_offset(n) + dims[n]).map(|e| e as u64))
        .collect();
    let terms = problem
        .terms
        .iter()
        .zip(&decomposition.partitions)
        .map(|(t, p)| {
            p.worker(rank)
                .edge_map
                .globals()
                .iter()
                .flat_map(|&m| (t.op.row_offset(m)..t.op.row_offset(m + 1)).map(|e| e as u64))
                .collect()
        })
        .collect();
    (x, terms)
}

impl<'p> Worker<'p> {
    fn new(
        problem: &'p Problem,
        decomposition: &Decomposition,
        rank: usize,
        options: &ChainOptions,
    ) -> Result<Self> {
        problem.validate()?;
        if problem.num_terms() > usize::from(u8::MAX) {
            return Err(Error::InvalidParameter("at most 255 operators".into()));
        }
        if decomposition.partitions.len() != problem.num_terms() {
            return Err(Error::InvalidOwnerMap(
                "one partition per operator is required".into(),
            ));
        }
        let dims = problem.terms[0].op.structure().col_dims();
        let layout = WorkerLayout::new(&decomposition.partition_refs(), dims, rank)?;
        let (x_elems, term_elems) = element_maps(problem, decomposition, rank);
        let mut terms = Vec::with_capacity(problem.num_terms());
        for ((t, p), elems) in problem
            .terms
            .iter()
            .zip(&decomposition.partitions)
            .zip(term_elems)
        {
            let local = LocalOperator::new(&t.op, p, &layout)?;
            let n = local.output_len();
            terms.push(TermWorker {
                g: t.g.localize(&elems),
                local,
                elems,
                v: vec![0.0; n],
                z: vec![0.0; n],
                u: vec![0.0; n],
                d: vec![0.0; n],
            });
        }
        let halo_send: BTreeMap<_, _> = layout
            .send_lists()
            .iter()
            .map(|(&k, vs)| (k, layout.positions(vs)))
            .collect();
        let halo_recv: BTreeMap<_, _> = layout
            .halo_from()
            .iter()
            .map(|(&k, vs)| (k, layout.positions(vs)))
            .collect();
        let grid = match options.halo {
            HaloStrategy::Generic => None,
            HaloStrategy::Grid(g) => Some(grid_plan(g, &layout, dims)?),
        };
        let partial_neighbors: Vec<usize> = layout.halo_from().keys().copied().collect();
        let partials = match terms.first() {
            Some(t) => t
                .local
                .partial_lens()
                .iter()
                .map(|&l| vec![0.0; l])
                .collect(),
            None => Vec::new(),
        };
        let owned = layout.owned_elems();
        Ok(Self {
            problem,
            rank,
            num_workers: layout.num_workers(),
            terms,
            consts: TermConsts::all(problem),
            x_elems,
            owned,
            x_ext: vec![0.0; layout.ext_elems()],
            adj_recv: halo_send.clone(),
            halo_send,
            halo_recv,
            grid,
            partial_neighbors,
            own: vec![0.0; owned],
            partials,
            delta: vec![0.0; owned],
            aggregation: options.aggregation,
            noise: options.noise(),
            threshold: options.divergence_threshold,
        })
    }

    fn term_lens(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.elems.len()).collect()
    }

    fn load_state(&mut self, state: &ChainState) {
        for (j, &e) in self.x_elems.iter().enumerate() {
            self.x_ext[j] = state.x[e as usize];
        }
        for (i, t) in self.terms.iter_mut().enumerate() {
            for (j, &e) in t.elems.iter().enumerate() {
                t.z[j] = state.z[i][e as usize];
                t.u[j] = state.u[i][e as usize];
            }
        }
    }

    fn load_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        snap.check(self.num_workers, self.rank, self.owned, &self.term_lens())?;
        self.x_ext[..self.owned].copy_from_slice(&snap.x);
        for (i, t) in self.terms.iter_mut().enumerate() {
            t.z.copy_from_slice(&snap.z[i]);
            t.u.copy_from_slice(&snap.u[i]);
        }
        Ok(())
    }

    fn snapshot(&self, t: u64) -> Snapshot {
        Snapshot {
            t,
            num_workers: self.num_workers,
            rank: self.rank,
            x: self.x_ext[..self.owned].to_vec(),
            z: self.terms.iter().map(|w| w.z.clone()).collect(),
            u: self.terms.iter().map(|w| w.u.clone()).collect(),
        }
    }

    /// Refreshes halo entries of `x_ext` for state `t`, then `v_i = D_i x`.
    fn refresh(&mut self, ep: &mut Endpoint, t: u64) -> Result<()> {
        match &self.grid {
            Some(g) => {
                let ext = grid_halo_exchange(ep, &g.geometry, t, &self.x_ext[..self.owned])?;
                for &(p, q) in &g.place {
                    self.x_ext[p] = ext[q];
                }
            }
            None => {
                let outgoing = self
                    .halo_send
                    .iter()
                    .map(|(&k, pos)| (k, pos.iter().map(|&p| self.x_ext[p]).collect()))
                    .collect();
                let got =
                    ep.halo_exchange(t, ALL_OPERATORS, outgoing, &expected_lens(&self.halo_recv))?;
                for (k, vals) in got {
                    for (&p, v) in self.halo_recv[&k].iter().zip(vals) {
                        self.x_ext[p] = v;
                    }
                }
            }
        }
        for w in &mut self.terms {
            w.local.apply_local_into(&self.x_ext, &mut w.v);
        }
        Ok(())
    }

    fn iterate(&mut self, ep: &mut Endpoint, t: u64) -> Result<()> {
        let reversed = self.aggregation == AggregationOrder::Reversed;
        self.own.iter_mut().for_each(|v| *v = 0.0);
        self.partials.iter_mut().flatten().for_each(|v| *v = 0.0);
        for (w, c) in self.terms.iter_mut().zip(&self.consts) {
            dual(c, &w.v, &w.z, &w.u, &mut w.d);
            w.local
                .adjoint_local_into(&w.d, &mut self.own, &mut self.partials, reversed);
        }
        let outgoing = self
            .partial_neighbors
            .iter()
            .copied()
            .zip(self.partials.iter().cloned())
            .collect();
        let incoming =
            ep.adjoint_exchange(t, ALL_OPERATORS, outgoing, &expected_lens(&self.adj_recv))?;
        if reversed {
            self.delta.iter_mut().for_each(|v| *v = 0.0);
            for (k, vals) in incoming.iter().rev() {
                for (&p, v) in self.adj_recv[k].iter().zip(vals) {
                    self.delta[p] += v;
                }
            }
            for (dv, o) in self.delta.iter_mut().zip(&self.own) {
                *dv += o;
            }
        } else {
            self.delta.copy_from_slice(&self.own);
            for (k, vals) in &incoming {
                for (&p, v) in self.adj_recv[k].iter().zip(vals) {
                    self.delta[p] += v;
                }
            }
        }

        let x_elems = &self.x_elems;
        update_x(
            self.problem,
            &self.noise,
            t,
            &mut self.x_ext[..self.owned],
            &self.delta,
            |j| x_elems[j],
        );
        check_values(&self.x_ext[..self.owned], self.threshold, t, "x", |j| {
            x_elems[j] as usize
        })?;
        self.refresh(ep, t + 1)?;
        for (i, (w, c)) in self.terms.iter_mut().zip(&self.consts).enumerate() {
            let local = &w.local;
            let elems = &w.elems;
            update_z_u(
                c,
                &w.g,
                i as u8,
                &self.noise,
                t,
                &w.v,
                &mut w.z,
                &mut w.u,
                (0..local.edges().len()).map(|l| local.output_range(l)),
                |e| elems[e],
            );
            check_values(&w.z, self.threshold, t, &format!("z{}", i + 1), |j| {
                elems[j] as usize
            })?;
            check_values(&w.u, self.threshold, t, &format!("u{}", i + 1), |j| {
                elems[j] as usize
            })?;
        }
        Ok(())
    }

    fn gather_payload(&self, mode: GatherMode) -> Vec<f64> {
        let mut p = self.x_ext[..self.owned].to_vec();
        for w in &self.terms {
            p.extend_from_slice(&w.v);
        }
        if mode == GatherMode::Full {
            for w in &self.terms {
                p.extend_from_slice(&w.z);
                p.extend_from_slice(&w.u);
            }
        }
        p
    }
}

fn grid_plan(g: GridGeometry, layout: &WorkerLayout, dims: &[usize]) -> Result<GridHalo> {
    let rank = layout.rank();
    if dims.len() != g.height * g.width || dims.iter().any(|&d| d != 1) {
        return Err(Error::InvalidParameter(
            "grid halos need one scalar vertex per pixel".into(),
        ));
    }
    if g.rows * g.cols != layout.num_workers() {
        return Err(Error::InvalidParameter(format!(
            "{}x{} grid for {} workers",
            g.rows,
            g.cols,
            layout.num_workers()
        )));
    }
    let tile = g.tile(rank);
    let tile_pixels: Vec<usize> = (tile.r0..tile.r1)
        .flat_map(|r| (tile.c0..tile.c1).map(move |c| r * g.width + c))
        .collect();
    if layout.owned_vertices() != tile_pixels {
        return Err(Error::InvalidOwnerMap(format!(
            "worker {rank} does not own exactly its grid tile"
        )));
    }
    let ext = g.extended(rank);
    let owned = layout.owned_vertices().len();
    let mut place = Vec::new();
    for (l, &n) in layout.vertex_map().globals().iter().enumerate().skip(owned) {
        let (r, c) = (n / g.width, n % g.width);
        if !ext.contains(r, c) {
            return Err(Error::MissingHalo {
                worker: rank,
                vertex: n,
            });
        }
        place.push((l, ext.index(r, c)));
    }
    Ok(GridHalo { geometry: g, place })
}

/// Rebuilds global states from the per-worker gather payloads on rank 0.
#[derive(Debug, Clone)]
pub struct StateAssembler {
    x_elems: Vec<Vec<u64>>,
    term_elems: Vec<Vec<Vec<u64>>>,
    dim: usize,
    term_dims: Vec<usize>,
}

impl StateAssembler {
    pub fn new(problem: &Problem, decomposition: &Decomposition) -> Self {
        let (x_elems, term_elems) = (0..decomposition.num_workers())
            .map(|k| element_maps(problem, decomposition, k))
            .unzip();
        Self {
            x_elems,
            term_elems,
            dim: problem.dim(),
            term_dims: problem
                .terms
                .iter()
                .map(|t| t.op.structure().row_dims().iter().sum())
                .collect(),
        }
    }

    pub fn assemble(
        &self,
        payloads: &[Vec<f64>],
        mode: GatherMode,
        out: &mut ChainState,
    ) -> Result<()> {
        let full = mode == GatherMode::Full;
        out.x.resize(self.dim, 0.0);
        let terms = self.term_dims.len();
        for w in [&mut out.v, &mut out.z, &mut out.u] {
            w.resize(terms, Vec::new());
        }
        for (i, &d) in self.term_dims.iter().enumerate() {
            out.v[i].resize(d, 0.0);
            let zlen = if full { d } else { 0 };
            out.z[i].resize(zlen, 0.0);
            out.u[i].resize(zlen, 0.0);
        }
        for (k, p) in payloads.iter().enumerate() {
            let mut at = 0;
            let mut put = |dst: &mut [f64], elems: &[u64]| -> Result<()> {
                let src = p.get(at..at + elems.len()).ok_or_else(|| {
                    Error::ProtocolViolation(format!("short gather payload from rank {k}"))
                })?;
                for (&e, &v) in elems.iter().zip(src) {
                    dst[e as usize] = v;
                }
                at += elems.len();
                Ok(())
            };
            put(&mut out.x, &self.x_elems[k])?;
            for i in 0..terms {
                put(&mut out.v[i], &self.term_elems[k][i])?;
            }
            if full {
                for i in 0..terms {
                    put(&mut out.z[i], &self.term_elems[k][i])?;
                    put(&mut out.u[i], &self.term_elems[k][i])?;
                }
            }
            if at != p.len() {
                return Err(Error::ProtocolViolation(format!(
                    "long gather payload from rank {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Runs one worker of the distributed chain. Rank 0 passes the observer;
/// other ranks pass `None`.
pub fn run_worker(
    problem: &Problem,
    decomposition: &Decomposition,
    ep: &mut Endpoint,
    options: &ChainOptions,
    observer: Option<&mut dyn Observer>,
) -> Result<RunReport> {
    let mut t = 0;
    let result = worker_body(problem, decomposition, ep, options, observer, &mut t);
    if let Err(e) = &result {
        ep.abort_with(t, Some(e));
    }
    result
}

fn worker_body(
    problem: &Problem,
    decomposition: &Decomposition,
    ep: &mut Endpoint,
    options: &ChainOptions,
    mut observer: Option<&mut dyn Observer>,
    t_out: &mut u64,
) -> Result<RunReport> {
    let rank = ep.rank();
    if ep.size() != decomposition.num_workers() {
        return Err(Error::InvalidParameter(format!(
            "{} endpoints for {} workers",
            ep.size(),
            decomposition.num_workers()
        )));
    }
    let mut w = Worker::new(problem, decomposition, rank, options)?;
    ep.roll_call(options.config_hash)?;
    let assembler = (rank == 0 && options.gather != GatherMode::None)
        .then(|| StateAssembler::new(problem, decomposition));

    let mut t = match &options.resume_from {
        Some(dir) => {
            let snap = Snapshot::read(&resume_path(dir, w.num_workers, rank))?;
            w.load_snapshot(&snap)?;
            snap.t
        }
        None => {
            w.load_state(&problem.initial_state()?);
            0
        }
    };
    *t_out = t;
    ep.barrier(t)?;
    w.refresh(ep, t)?;
    if t == 0 {
        if let Some(obs) = observer.as_deref_mut() {
            obs.initial(&problem.initial_state()?)?;
        }
    }

    let mut report = RunReport {
        start: t,
        ..RunReport::default()
    };
    let mut state = ChainState::default();
    while t < options.iterations {
        *t_out = t;
        let started = Instant::now();
        w.iterate(ep, t)?;
        let secs = started.elapsed().as_secs_f64();
        report.iter_seconds.push(secs);
        report.iterations += 1;
        if options.gather != GatherMode::None {
            if let Some(all) = ep.gather(t + 1, w.gather_payload(options.gather))? {
                if let (Some(a), Some(obs)) = (&assembler, observer.as_deref_mut()) {
                    a.assemble(&all, options.gather, &mut state)?;
                    obs.observe(t, &state, secs)?;
                }
            }
        }
        t += 1;
        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && t % options.checkpoint_every == 0 {
                w.snapshot(t)
                    .write(&resume_path(dir, w.num_workers, rank))?;
                ep.barrier(t)?;
                if let Some(obs) = observer.as_deref_mut() {
                    obs.checkpoint(t)?;
                }
            }
        }
    }
    *t_out = t;
    ep.barrier(t)?;
    Ok(report)
}

fn severity(e: &Error) -> u8 {
    match e {
        Error::NonFiniteState { .. } => 3,
        Error::TransportFailure(_) => 1,
        _ => 2,
    }
}

/// Runs every worker on its own thread over the given endpoints (one per
/// rank, in rank order) and returns rank 0's report. When workers fail, the
/// most specific error wins: divergence, then local faults, then transport.
pub fn run_distributed(
    problem: &Problem,
    decomposition: &Decomposition,
    options: &ChainOptions,
    endpoints: Vec<Endpoint>,
    observer: &mut dyn Observer,
) -> Result<RunReport> {
    let mut endpoints = endpoints.into_iter();
    let mut root = endpoints
        .next()
        .ok_or_else(|| Error::InvalidParameter("no endpoints".into()))?;
    let results: Vec<Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .map(|mut ep| {
                s.spawn(move || run_worker(problem, decomposition, &mut ep, options, None))
            })
            .collect();
        let mut results = vec![run_worker(
            problem,
            decomposition,
            &mut root,
            options,
            Some(observer),
        )];
        results.extend(handles.into_iter().map(|h| {
            h.join()
                .unwrap_or_else(|_| Err(Error::TransportFailure("worker thread panicked".into())))
        }));
        results
    });
    let mut first = None;
    let mut worst: Option<Error> = None;
    for r in results {
        match r {
            Ok(rep) => {
                first.get_or_insert(rep);
            }
            Err(e) => {
                if worst.as_ref().map_or(true, |w| severity(&e) > severity(w)) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        Some(e) => Err(e),
        None => first.ok_or_else(|| Error::InvalidParameter("no workers".into())),
    }
}

/// [`run_distributed`] over in-process channels.
pub fn run_inproc(
    problem: &Problem,
    decomposition: &Decomposition,
    options: &ChainOptions,
    observer: &mut dyn Observer,
) -> Result<RunReport> {
    let eps = inproc_endpoints(decomposition.num_workers());
    run_distributed(problem, decomposition, options, eps, observer)
}
