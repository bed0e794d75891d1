//! Per-worker operator slices and the serial mirror of the distributed
//! adjoint aggregation.

use std::collections::{BTreeMap, BTreeSet};

use super::BlockSparseOperator;
use crate::error::{Error, Result};
use crate::hypergraph::{HypergraphPartition, LocalMap};

/// Element layout of one worker's vertex data, shared by all operators.
///
/// The extended vector holds the owned vertices (ascending) followed by
/// every halo vertex any operator needs (ascending). Adjoint partials sent
/// to a neighbor use the same vertex list as the halo received from it.
#[derive(Debug, Clone)]
pub struct WorkerLayout {
    rank: usize,
    num_workers: usize,
    map: LocalMap,
    owned_len: usize,
    elem_off: Vec<usize>,
    halo_from: BTreeMap<usize, Vec<usize>>,
    send_lists: BTreeMap<usize, Vec<usize>>,
}

impl WorkerLayout {
    pub fn new(
        partitions: &[&HypergraphPartition],
        col_dims: &[usize],
        rank: usize,
    ) -> Result<Self> {
        let first = partitions
            .first()
            .ok_or_else(|| Error::InvalidParameter("no operator partitions".into()))?;
        for p in partitions {
            if p.vertex_owner != first.vertex_owner || p.num_workers != first.num_workers {
                return Err(Error::InvalidOwnerMap(
                    "operators disagree on the vertex owner map".into(),
                ));
            }
        }
        if col_dims.len() != first.vertex_owner.len() {
            return Err(Error::DimensionMismatch {
                expected: first.vertex_owner.len(),
                actual: col_dims.len(),
            });
        }
        if rank >= first.num_workers {
            return Err(Error::InvalidOwnerMap(format!("rank {rank} out of range")));
        }
        let mut halo_from: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut send_lists: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for p in partitions {
            for (&kp, vs) in &p.worker(rank).halo {
                halo_from.entry(kp).or_default().extend(vs);
            }
            for &kp in &p.worker(rank).send_to {
                send_lists.entry(kp).or_default().extend(p.halo(kp, rank));
            }
        }
        let owned = &first.worker(rank).vertices;
        let halo: BTreeSet<usize> = halo_from.values().flatten().copied().collect();
        let halo: Vec<usize> = halo.into_iter().collect();
        let map = LocalMap::from_groups(&[owned, &halo]);
        let mut elem_off = Vec::with_capacity(map.len() + 1);
        elem_off.push(0);
        for &g in map.globals() {
            elem_off.push(elem_off.last().unwrap() + col_dims[g]);
        }
        let collect = |m: BTreeMap<usize, BTreeSet<usize>>| {
            m.into_iter()
                .map(|(k, s)| (k, s.into_iter().collect()))
                .collect()
        };
        Ok(Self {
            rank,
            num_workers: first.num_workers,
            owned_len: owned.len(),
            map,
            elem_off,
            halo_from: collect(halo_from),
            send_lists: collect(send_lists),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn owned_vertices(&self) -> &[usize] {
        &self.map.globals()[..self.owned_len]
    }

    pub fn vertex_map(&self) -> &LocalMap {
        &self.map
    }

    /// Number of owned vertex elements.
    pub fn owned_elems(&self) -> usize {
        self.elem_off[self.owned_len]
    }

    /// Number of elements in the extended (owned + halo) vector.
    pub fn ext_elems(&self) -> usize {
        *self.elem_off.last().unwrap()
    }

    /// Element range of global vertex `n` in the extended vector.
    pub fn elems_of(&self, n: usize) -> Option<std::ops::Range<usize>> {
        self.map
            .local(n)
            .map(|l| self.elem_off[l]..self.elem_off[l + 1])
    }

    /// Neighbors sending vertex halos to this worker, with their vertices.
    pub fn halo_from(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.halo_from
    }

    /// Neighbors this worker sends vertex halos to, with the owned vertices sent.
    pub fn send_lists(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.send_lists
    }

    /// Extended-vector element positions of a vertex list, in list order.
    pub fn positions(&self, vertices: &[usize]) -> Vec<usize> {
        vertices
            .iter()
            .flat_map(|&n| self.elems_of(n).expect("vertex belongs to layout"))
            .collect()
    }

    /// Concatenates owned values with received halos into the extended
    /// vector; `halo` maps neighbor rank to values in that neighbor's vertex
    /// order.
    pub fn assemble(&self, x_owned: &[f64], halo: &BTreeMap<usize, Vec<f64>>) -> Result<Vec<f64>> {
        if x_owned.len() != self.owned_elems() {
            return Err(Error::DimensionMismatch {
                expected: self.owned_elems(),
                actual: x_owned.len(),
            });
        }
        let mut ext = vec![0.0; self.ext_elems()];
        ext[..x_owned.len()].copy_from_slice(x_owned);
        for (kp, vertices) in &self.halo_from {
            let pos = self.positions(vertices);
            match halo.get(kp) {
                Some(vals) if vals.len() == pos.len() => {
                    for (p, v) in pos.into_iter().zip(vals) {
                        ext[p] = *v;
                    }
                }
                Some(vals) => {
                    let missing = self.vertex_at(&pos, vals.len().min(pos.len()));
                    return Err(Error::MissingHalo {
                        worker: self.rank,
                        vertex: missing.unwrap_or(vertices[0]),
                    });
                }
                None => {
                    return Err(Error::MissingHalo {
                        worker: self.rank,
                        vertex: vertices[0],
                    })
                }
            }
        }
        Ok(ext)
    }

    fn vertex_at(&self, pos: &[usize], i: usize) -> Option<usize> {
        let p = *pos.get(i)?;
        let l = self.elem_off.partition_point(|&o| o <= p) - 1;
        Some(self.map.global(l))
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Own(usize),
    Partial(usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    x_off: usize,
    block: usize,
    target: Target,
}

/// Rows of one operator owned by one worker, addressed through a
/// [`WorkerLayout`].
#[derive(Debug, Clone)]
pub struct LocalOperator {
    edges: Vec<usize>,
    out_off: Vec<usize>,
    entry_ptr: Vec<usize>,
    entries: Vec<Entry>,
    ascending: Vec<usize>,
    blocks: Vec<f64>,
    block_ptr: Vec<usize>,
    partial_neighbors: Vec<usize>,
    partial_lens: Vec<usize>,
}

impl LocalOperator {
    pub fn new(
        op: &BlockSparseOperator,
        partition: &HypergraphPartition,
        layout: &WorkerLayout,
    ) -> Result<Self> {
        let s = op.structure();
        if partition.vertex_owner.len() != s.num_vertices()
            || partition.edge_owner.len() != s.num_edges()
        {
            return Err(Error::InvalidOwnerMap(
                "partition does not match operator".into(),
            ));
        }
        let rank = layout.rank();
        let sets = partition.worker(rank);
        let edges = sets.edge_map.globals().to_vec();
        let partial_neighbors: Vec<usize> = layout.halo_from().keys().copied().collect();
        let mut partial_slot: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let mut partial_lens = Vec::new();
        for (slot, vertices) in layout.halo_from().values().enumerate() {
            let mut off = 0;
            for &n in vertices {
                partial_slot.insert(n, (slot, off));
                off += s.col_dims()[n];
            }
            partial_lens.push(off);
        }

        let mut out_off = vec![0];
        let mut entry_ptr = vec![0];
        let mut entries = Vec::new();
        let mut blocks = Vec::new();
        let mut block_ptr = vec![0];
        for &m in &edges {
            out_off.push(out_off.last().unwrap() + s.row_dims()[m]);
            for (j, &n) in s.row_range(m).zip(s.edge(m)) {
                let range = layout.elems_of(n).ok_or(Error::MissingHalo {
                    worker: rank,
                    vertex: n,
                })?;
                let target = if partition.vertex_owner[n] == rank {
                    Target::Own(range.start)
                } else {
                    let (slot, off) = partial_slot[&n];
                    Target::Partial(slot, off)
                };
                blocks.extend_from_slice(op.block_at(j));
                block_ptr.push(blocks.len());
                entries.push(Entry {
                    x_off: range.start,
                    block: entries.len(),
                    target,
                });
            }
            entry_ptr.push(entries.len());
        }
        let mut ascending: Vec<usize> = (0..edges.len()).collect();
        ascending.sort_by_key(|&l| edges[l]);
        Ok(Self {
            edges,
            out_off,
            entry_ptr,
            entries,
            ascending,
            blocks,
            block_ptr,
            partial_neighbors,
            partial_lens,
        })
    }

    /// Global hyperedge indices in local order.
    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    /// Number of local output elements.
    pub fn output_len(&self) -> usize {
        *self.out_off.last().unwrap()
    }

    /// Element range of local hyperedge `l` in the local output vector.
    pub fn output_range(&self, l: usize) -> std::ops::Range<usize> {
        self.out_off[l]..self.out_off[l + 1]
    }

    /// Neighbors receiving adjoint partials, ascending.
    pub fn partial_neighbors(&self) -> &[usize] {
        &self.partial_neighbors
    }

    /// Buffer sizes for [`LocalOperator::adjoint_local_into`].
    pub fn partial_lens(&self) -> &[usize] {
        &self.partial_lens
    }

    fn block(&self, e: &Entry) -> &[f64] {
        &self.blocks[self.block_ptr[e.block]..self.block_ptr[e.block + 1]]
    }

    /// Local hyperedge weights from the extended vertex vector, with the same
    /// floating-point operation order as the global product.
    pub fn apply_local_into(&self, x_ext: &[f64], out: &mut [f64]) {
        for l in 0..self.edges.len() {
            let o = &mut out[self.out_off[l]..self.out_off[l + 1]];
            let rows = o.len();
            let es = &self.entries[self.entry_ptr[l]..self.entry_ptr[l + 1]];
            for (r, ov) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for e in es {
                    let b = self.block(e);
                    let cols = b.len() / rows;
                    for (c, &bv) in b[r * cols..(r + 1) * cols].iter().enumerate() {
                        acc += bv * x_ext[e.x_off + c];
                    }
                }
                *ov = acc;
            }
        }
    }

    pub fn apply_local(
        &self,
        layout: &WorkerLayout,
        x_owned: &[f64],
        halo: &BTreeMap<usize, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let ext = layout.assemble(x_owned, halo)?;
        let mut out = vec![0.0; self.output_len()];
        self.apply_local_into(&ext, &mut out);
        Ok(out)
    }

    /// Accumulates `D*_{m,k} d_m` into `own` (owned elements) and the
    /// neighbor slices into `partials`, visiting hyperedges by ascending
    /// global index (descending when `reversed`).
    pub fn adjoint_local_into(
        &self,
        d: &[f64],
        own: &mut [f64],
        partials: &mut [Vec<f64>],
        reversed: bool,
    ) {
        let mut visit = |l: usize| {
            let dm = &d[self.out_off[l]..self.out_off[l + 1]];
            let rows = dm.len();
            for e in &self.entries[self.entry_ptr[l]..self.entry_ptr[l + 1]] {
                let b = self.block(e);
                let cols = b.len() / rows;
                let target = match e.target {
                    Target::Own(off) => &mut own[off..off + cols],
                    Target::Partial(slot, off) => &mut partials[slot][off..off + cols],
                };
                for (c, t) in target.iter_mut().enumerate() {
                    for (r, &dv) in dm.iter().enumerate() {
                        *t += b[r * cols + c] * dv;
                    }
                }
            }
        };
        if reversed {
            self.ascending.iter().rev().for_each(|&l| visit(l));
        } else {
            self.ascending.iter().for_each(|&l| visit(l));
        }
    }

    /// Own contribution over the owned elements and the partial sums bound
    /// for each neighbor.
    pub fn adjoint_local(
        &self,
        layout: &WorkerLayout,
        d: &[f64],
    ) -> Result<(Vec<f64>, BTreeMap<usize, Vec<f64>>)> {
        if d.len() != self.output_len() {
            return Err(Error::DimensionMismatch {
                expected: self.output_len(),
                actual: d.len(),
            });
        }
        let mut own = vec![0.0; layout.owned_elems()];
        let mut partials: Vec<Vec<f64>> = self.partial_lens.iter().map(|&n| vec![0.0; n]).collect();
        self.adjoint_local_into(d, &mut own, &mut partials, false);
        let outgoing = self
            .partial_neighbors
            .iter()
            .copied()
            .zip(partials)
            .filter(|(_, p)| !p.is_empty())
            .collect();
        Ok((own, outgoing))
    }
}

/// Global adjoint `Σ_i D_i* d_i` computed with the distributed aggregation
/// order: per vertex, contributions from hyperedges owned by the vertex's
/// worker first, then one partial sum per foreign owner by ascending rank.
#[derive(Debug, Clone)]
pub struct SerialAdjoint {
    targets: Vec<Vec<usize>>,
    partial_len: usize,
    /// (element of output, element of partial buffer), ascending by vertex then rank.
    fold: Vec<(usize, usize)>,
}

const OWN: usize = usize::MAX;

impl SerialAdjoint {
    pub fn new(
        ops: &[&BlockSparseOperator],
        vertex_owner: &[usize],
        edge_owners: &[&[usize]],
    ) -> Result<Self> {
        if ops.len() != edge_owners.len() {
            return Err(Error::DimensionMismatch {
                expected: ops.len(),
                actual: edge_owners.len(),
            });
        }
        let mut slots: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (op, eo) in ops.iter().zip(edge_owners) {
            let s = op.structure();
            if s.num_vertices() != vertex_owner.len() || s.num_edges() != eo.len() {
                return Err(Error::InvalidOwnerMap(
                    "owner map does not match operator".into(),
                ));
            }
            for (m, n) in s.nonzeros() {
                if vertex_owner[n] != eo[m] {
                    slots.insert((n, eo[m]));
                }
            }
        }
        let col_dims = ops[0].structure().col_dims();
        let mut slot_off = BTreeMap::new();
        let mut fold = Vec::new();
        let mut off = 0;
        for &(n, k) in &slots {
            slot_off.insert((n, k), off);
            let base = ops[0].col_offset(n);
            for c in 0..col_dims[n] {
                fold.push((base + c, off + c));
            }
            off += col_dims[n];
        }
        let targets = ops
            .iter()
            .zip(edge_owners)
            .map(|(op, eo)| {
                op.structure()
                    .nonzeros()
                    .map(|(m, n)| {
                        if vertex_owner[n] == eo[m] {
                            OWN
                        } else {
                            slot_off[&(n, eo[m])]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            targets,
            partial_len: off,
            fold,
        })
    }

    /// Writes `Σ_i D_i* duals[i]` into `out`.
    pub fn apply_into(&self, ops: &[&BlockSparseOperator], duals: &[&[f64]], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut partial = vec![0.0; self.partial_len];
        for ((op, d), targets) in ops.iter().zip(duals).zip(&self.targets) {
            let s = op.structure();
            for m in 0..s.num_edges() {
                let r0 = op.row_offset(m);
                let rows = s.row_dims()[m];
                let dm = &d[r0..r0 + rows];
                for (j, &n) in s.row_range(m).zip(s.edge(m)) {
                    let b = op.block_at(j);
                    let cols = b.len() / rows;
                    let target = match targets[j] {
                        OWN => &mut out[op.col_offset(n)..op.col_offset(n) + cols],
                        off => &mut partial[off..off + cols],
                    };
                    for (c, t) in target.iter_mut().enumerate() {
                        for (r, &dv) in dm.iter().enumerate() {
                            *t += b[r * cols + c] * dv;
                        }
                    }
                }
            }
        }
        for &(o, p) in &self.fold {
            out[o] += partial[p];
        }
    }
}
