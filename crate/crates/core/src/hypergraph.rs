//! Hypergraph view of a block-sparse operator and its partition over workers.
//!
//! Rows of the block matrix are hyperedges, columns are vertices. A partition
//! assigns every vertex and every hyperedge to a worker; all communication
//! sets used by the distributed sampler are derived here from the nonzero
//! pattern and the two owner maps. Indices are zero-based throughout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block dimensions and nonzero pattern of a block-sparse operator.
///
/// The pattern is stored row-wise: `edge(m)` is the sorted list of vertices
/// touched by hyperedge `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorStructure {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl OperatorStructure {
    /// Builds a structure from per-row output sizes, per-column input sizes
    /// and a list of nonzero `(m, n)` block positions. Duplicates are merged.
    pub fn new(
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
        nonzeros: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let m_count = row_dims.len();
        let n_count = col_dims.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m_count];
        for (m, n) in nonzeros {
            if m >= m_count || n >= n_count {
                return Err(Error::InvalidStructure(format!(
                    "nonzero ({m}, {n}) outside {m_count}x{n_count} block grid"
                )));
            }
            rows[m].push(n);
        }
        let mut row_ptr = Vec::with_capacity(m_count + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let s = Self {
            row_dims,
            col_dims,
            row_ptr,
            cols,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if let Some(m) = (0..self.num_edges()).find(|&m| self.edge(m).is_empty()) {
            return Err(Error::InvalidStructure(format!("hyperedge {m} is empty")));
        }
        let mut seen = vec![false; self.num_vertices()];
        for &n in &self.cols {
            seen[n] = true;
        }
        if let Some(n) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidStructure(format!(
                "vertex {n} belongs to no hyperedge"
            )));
        }
        if let Some(m) = self.row_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidStructure(format!("row block {m} has size 0")));
        }
        if let Some(n) = self.col_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidStructure(format!(
                "column block {n} has size 0"
            )));
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.row_dims.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.col_dims.len()
    }

    /// Sorted vertex indices of hyperedge `m`.
    pub fn edge(&self, m: usize) -> &[usize] {
        &self.cols[self.row_ptr[m]..self.row_ptr[m + 1]]
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Position of block `(m, n)` in row-major nonzero order.
    pub fn block_index(&self, m: usize, n: usize) -> Option<usize> {
        let row = self.edge(m);
        row.binary_search(&n).ok().map(|j| self.row_ptr[m] + j)
    }

    pub(crate) fn row_range(&self, m: usize) -> std::ops::Range<usize> {
        self.row_ptr[m]..self.row_ptr[m + 1]
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_edges()).flat_map(move |m| self.edge(m).iter().map(move |&n| (m, n)))
    }
}

/// Bijection between global indices and contiguous local indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalMap {
    to_global: Vec<usize>,
    to_local: HashMap<usize, usize>,
}

impl LocalMap {
    pub fn from_groups(groups: &[&[usize]]) -> Self {
        let to_global: Vec<usize> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        let to_local = to_global.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        Self {
            to_global,
            to_local,
        }
    }

    pub fn len(&self) -> usize {
        self.to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_global.is_empty()
    }

    pub fn global(&self, local: usize) -> usize {
        self.to_global[local]
    }

    pub fn local(&self, global: usize) -> Option<usize> {
        self.to_local.get(&global).copied()
    }

    pub fn globals(&self) -> &[usize] {
        &self.to_global
    }
}

/// Index sets held by one worker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerSets {
    /// Owned vertices, sorted.
    pub vertices: Vec<usize>,
    /// Owned hyperedges, sorted.
    pub edges: Vec<usize>,
    /// Owned hyperedges computable without communication.
    pub local_edges: Vec<usize>,
    /// Owned hyperedges needing at least one off-worker vertex.
    pub boundary_edges: Vec<usize>,
    /// Neighbor `k'` to the owned hyperedges touching vertices of `k'`.
    pub recv_edges: BTreeMap<usize, Vec<usize>>,
    /// Neighbor `k'` to the vertices of `k'` that this worker must receive.
    pub halo: BTreeMap<usize, Vec<usize>>,
    /// Workers this worker receives vertex values from.
    pub recv_from: Vec<usize>,
    /// Workers this worker sends vertex values to.
    pub send_to: Vec<usize>,
    /// Owned vertices (ascending) followed by all halo vertices (ascending).
    pub vertex_map: LocalMap,
    /// Local hyperedges (ascending) followed by boundary hyperedges (ascending).
    pub edge_map: LocalMap,
}

impl WorkerSets {
    /// Union of all halo sets, sorted.
    pub fn halo_vertices(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.halo.values().flatten().copied().collect();
        set.into_iter().collect()
    }
}

/// Complete partition of one operator's hypergraph over `K` workers.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergraphPartition {
    pub num_workers: usize,
    pub vertex_owner: Vec<usize>,
    pub edge_owner: Vec<usize>,
    /// For each hyperedge, the workers other than its owner holding one of its vertices.
    pub edge_touch: Vec<Vec<usize>>,
    pub workers: Vec<WorkerSets>,
}

impl HypergraphPartition {
    pub fn worker(&self, k: usize) -> &WorkerSets {
        &self.workers[k]
    }

    /// Vertices `V_(k,k')` that worker `k` receives from `k'`.
    pub fn halo(&self, k: usize, from: usize) -> &[usize] {
        self.workers[k].halo.get(&from).map_or(&[], Vec::as_slice)
    }

    pub fn descriptor(&self) -> PartitionDescriptor {
        PartitionDescriptor {
            num_workers: self.num_workers,
            vertex_owner: self.vertex_owner.clone(),
            edge_owner: self.edge_owner.clone(),
        }
    }
}

/// Serializable owner maps, enough to rebuild a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionDescriptor {
    #[serde(rename = "K")]
    pub num_workers: usize,
    pub vertex_owner: Vec<usize>,
    pub edge_owner: Vec<usize>,
}

impl PartitionDescriptor {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn build(&self, structure: &OperatorStructure) -> Result<HypergraphPartition> {
        build_partition(
            structure,
            self.num_workers,
            &self.vertex_owner,
            &self.edge_owner,
        )
    }
}

fn check_owner_map(owner: &[usize], len: usize, k: usize, what: &str) -> Result<()> {
    if owner.len() != len {
        return Err(Error::InvalidOwnerMap(format!(
            "{what} owner map has {} entries, expected {len}",
            owner.len()
        )));
    }
    if let Some((i, &o)) = owner.iter().enumerate().find(|(_, &o)| o >= k) {
        return Err(Error::InvalidOwnerMap(format!(
            "{what} {i} assigned to worker {o}, only {k} workers"
        )));
    }
    Ok(())
}

/// Derives every worker index set from the nonzero pattern and owner maps.
pub fn build_partition(
    structure: &OperatorStructure,
    num_workers: usize,
    vertex_owner: &[usize],
    edge_owner: &[usize],
) -> Result<HypergraphPartition> {
    let n_count = structure.num_vertices();
    let m_count = structure.num_edges();
    if num_workers == 0 || num_workers > n_count {
        return Err(Error::InvalidOwnerMap(format!(
            "worker count {num_workers} outside 1..={n_count}"
        )));
    }
    check_owner_map(vertex_owner, n_count, num_workers, "vertex")?;
    check_owner_map(edge_owner, m_count, num_workers, "hyperedge")?;

    let mut workers = vec![WorkerSets::default(); num_workers];
    for (n, &k) in vertex_owner.iter().enumerate() {
        workers[k].vertices.push(n);
    }

    let mut edge_touch = Vec::with_capacity(m_count);
    let mut halo_sets: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); num_workers];
    for m in 0..m_count {
        let km = edge_owner[m];
        let edge = structure.edge(m);
        if !edge.iter().any(|&n| vertex_owner[n] == km) {
            return Err(Error::EmptyHyperedgeIntersection { edge: m, owner: km });
        }
        let mut touch = BTreeSet::new();
        for &n in edge {
            let kn = vertex_owner[n];
            if kn != km {
                touch.insert(kn);
                halo_sets[km].entry(kn).or_default().insert(n);
            }
        }
        let w = &mut workers[km];
        w.edges.push(m);
        if touch.is_empty() {
            w.local_edges.push(m);
        } else {
            w.boundary_edges.push(m);
            for &kp in &touch {
                w.recv_edges.entry(kp).or_default().push(m);
            }
        }
        edge_touch.push(touch.into_iter().collect());
    }

    for (k, halos) in halo_sets.into_iter().enumerate() {
        workers[k].halo = halos
            .into_iter()
            .map(|(kp, set)| (kp, set.into_iter().collect()))
            .collect();
        workers[k].recv_from = workers[k].halo.keys().copied().collect();
    }
    for k in 0..num_workers {
        let senders = workers[k].recv_from.clone();
        for kp in senders {
            workers[kp].send_to.push(k);
        }
    }
    for w in &mut workers {
        w.send_to.sort_unstable();
        let halo = w.halo_vertices();
        w.vertex_map = LocalMap::from_groups(&[&w.vertices, &halo]);
        w.edge_map = LocalMap::from_groups(&[&w.local_edges, &w.boundary_edges]);
    }

    Ok(HypergraphPartition {
        num_workers,
        vertex_owner: vertex_owner.to_vec(),
        edge_owner: edge_owner.to_vec(),
        edge_touch,
        workers,
    })
}

/// Row-major worker index of every pixel of a `height x width` image split
/// into a `rows x cols` grid of tiles.
pub fn grid_partition_2d(
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<usize>> {
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(Error::InvalidParameter(format!(
            "cannot split {height}x{width} pixels into a {rows}x{cols} worker grid"
        )));
    }
    let mut owner = Vec::with_capacity(height * width);
    for r in 0..height {
        let kr = r * rows / height;
        for c in 0..width {
            owner.push(kr * cols + c * cols / width);
        }
    }
    Ok(owner)
}

/// Pixel range `[start, end)` along one axis covered by tile `index` of `parts`.
pub fn grid_range(len: usize, parts: usize, index: usize) -> (usize, usize) {
    // first pixel p with floor(p * parts / len) >= index
    let start = (index * len).div_ceil(parts);
    let end = ((index + 1) * len).div_ceil(parts);
    (start, end)
}

/// A broken partition invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

/// Checks every partition invariant against `structure`; an empty result
/// means the partition is consistent.
pub fn validate_partition(
    p: &HypergraphPartition,
    structure: &OperatorStructure,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push =
        |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });
    let k_count = p.num_workers;
    let n_count = structure.num_vertices();
    let m_count = structure.num_edges();

    if p.workers.len() != k_count {
        push(
            "worker count",
            format!("{} worker set entries for K = {k_count}", p.workers.len()),
        );
        return out;
    }
    if p.vertex_owner.len() != n_count || p.edge_owner.len() != m_count {
        push(
            "owner maps",
            format!(
                "lengths {}/{} do not match {n_count} vertices/{m_count} hyperedges",
                p.vertex_owner.len(),
                p.edge_owner.len()
            ),
        );
        return out;
    }
    if p.vertex_owner
        .iter()
        .chain(&p.edge_owner)
        .any(|&k| k >= k_count)
    {
        push("owner maps", "owner index out of range".into());
        return out;
    }

    for (k, w) in p.workers.iter().enumerate() {
        for (name, set) in [
            ("V_k", &w.vertices),
            ("Ē_k", &w.edges),
            ("E_k", &w.local_edges),
            ("E_Rk", &w.boundary_edges),
        ] {
            if set.windows(2).any(|x| x[0] >= x[1]) {
                push(
                    "sorted sets",
                    format!("{name} of worker {k} not strictly ascending"),
                );
            }
        }
    }

    let mut vcount = vec![0usize; n_count];
    for (k, w) in p.workers.iter().enumerate() {
        for &n in &w.vertices {
            if n >= n_count {
                push("V_k not a partition", format!("vertex {n} out of range"));
                continue;
            }
            vcount[n] += 1;
            if p.vertex_owner[n] != k {
                push(
                    "V_k not a partition",
                    format!(
                        "vertex {n} listed on worker {k}, owned by {}",
                        p.vertex_owner[n]
                    ),
                );
            }
        }
    }
    for (n, &c) in vcount.iter().enumerate() {
        if c != 1 {
            push(
                "V_k not a partition",
                format!("vertex {n} appears {c} times"),
            );
        }
    }

    let mut ecount = vec![0usize; m_count];
    for (k, w) in p.workers.iter().enumerate() {
        for &m in &w.edges {
            if m >= m_count {
                push("Ē_k not a partition", format!("hyperedge {m} out of range"));
                continue;
            }
            ecount[m] += 1;
            if p.edge_owner[m] != k {
                push(
                    "Ē_k not a partition",
                    format!(
                        "hyperedge {m} listed on worker {k}, owned by {}",
                        p.edge_owner[m]
                    ),
                );
            }
        }
    }
    for (m, &c) in ecount.iter().enumerate() {
        if c != 1 {
            push(
                "Ē_k not a partition",
                format!("hyperedge {m} appears {c} times"),
            );
        }
    }

    // Recompute W_m and the expected sets from the pattern.
    let mut expected_recv: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); k_count];
    let mut expected_halo: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); k_count];
    for m in 0..m_count {
        let km = p.edge_owner[m];
        let edge = structure.edge(m);
        if !edge.iter().any(|&n| p.vertex_owner[n] == km) {
            push(
                "e_m ∩ V_{k_m} ≠ ∅",
                format!("hyperedge {m} shares no vertex with worker {km}"),
            );
        }
        let touch: BTreeSet<usize> = edge
            .iter()
            .map(|&n| p.vertex_owner[n])
            .filter(|&k| k != km)
            .collect();
        let touch: Vec<usize> = touch.into_iter().collect();
        if p.edge_touch.get(m) != Some(&touch) {
            push(
                "W_m",
                format!(
                    "hyperedge {m}: stored {:?}, expected {touch:?}",
                    p.edge_touch.get(m)
                ),
            );
        }
        for &kp in &touch {
            expected_recv[km].entry(kp).or_default().push(m);
            let h = expected_halo[km].entry(kp).or_default();
            h.extend(edge.iter().copied().filter(|&n| p.vertex_owner[n] == kp));
        }
        let in_local = p.workers[km].local_edges.binary_search(&m).is_ok();
        if in_local != touch.is_empty() {
            push(
                "m ∈ E_k ⇔ k_m = k and W_m = ∅",
                format!("hyperedge {m} on worker {km}"),
            );
        }
    }

    for (k, w) in p.workers.iter().enumerate() {
        let recv_union: BTreeSet<usize> = w.recv_edges.values().flatten().copied().collect();
        let mut union: Vec<usize> = w.local_edges.iter().chain(&recv_union).copied().collect();
        let before = union.len();
        union.sort_unstable();
        union.dedup();
        if union.len() != before || union != w.edges {
            push("Ē_k ≠ E_k ⊔ E_Rk", format!("worker {k}"));
        }
        for &m in &w.local_edges {
            if m < m_count && p.edge_owner[m] != k {
                push(
                    "m ∈ E_k ⇔ k_m = k and W_m = ∅",
                    format!("hyperedge {m} listed in E_k of worker {k}"),
                );
            }
        }
        if recv_union.into_iter().collect::<Vec<_>>() != w.boundary_edges {
            push("E_Rk = ∪ E_(k,k')", format!("worker {k}"));
        }
        if w.recv_edges != expected_recv[k] {
            push(
                "E_(k,k')",
                format!("worker {k}: receive hyperedge sets differ from pattern"),
            );
        }
        let halo_expected: BTreeMap<usize, Vec<usize>> = expected_halo[k]
            .iter()
            .map(|(&kp, s)| (kp, s.iter().copied().collect()))
            .collect();
        for (&kp, vs) in &w.halo {
            if let Some(n) = vs
                .iter()
                .find(|&&n| n >= n_count || p.vertex_owner[n] != kp)
            {
                push(
                    "V_(k,k') ⊆ V_k'",
                    format!("vertex {n} received by {k} from {kp}"),
                );
            }
        }
        if w.halo != halo_expected {
            push(
                "V_(k,k')",
                format!("worker {k}: halo sets differ from pattern"),
            );
        }
        let recv_from: Vec<usize> = halo_expected.keys().copied().collect();
        if w.recv_from != recv_from {
            push(
                "R_k",
                format!(
                    "worker {k}: stored {:?}, expected {recv_from:?}",
                    w.recv_from
                ),
            );
        }
        for &kp in &w.recv_from {
            if p.workers.get(kp).map_or(true, |o| !o.send_to.contains(&k)) {
                push(
                    "k' ∈ R_k ⇔ k ∈ S_k'",
                    format!("{kp} ∈ R_{k} but {k} ∉ S_{kp}"),
                );
            }
        }
        for &kp in &w.send_to {
            if p.workers
                .get(kp)
                .map_or(true, |o| !o.recv_from.contains(&k))
            {
                push(
                    "k' ∈ R_k ⇔ k ∈ S_k'",
                    format!("{kp} ∈ S_{k} but {k} ∉ R_{kp}"),
                );
            }
        }

        let halo = w.halo_vertices();
        let vexp: Vec<usize> = w.vertices.iter().chain(&halo).copied().collect();
        if w.vertex_map.globals() != vexp.as_slice() || !roundtrips(&w.vertex_map) {
            push("local maps", format!("worker {k}: vertex map"));
        }
        let eexp: Vec<usize> = w
            .local_edges
            .iter()
            .chain(&w.boundary_edges)
            .copied()
            .collect();
        if w.edge_map.globals() != eexp.as_slice() || !roundtrips(&w.edge_map) {
            push("local maps", format!("worker {k}: hyperedge map"));
        }
    }
    out
}

fn roundtrips(map: &LocalMap) -> bool {
    map.to_local.len() == map.to_global.len()
        && map
            .to_global
            .iter()
            .enumerate()
            .all(|(l, &g)| map.local(g) == Some(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv1d() -> OperatorStructure {
        OperatorStructure::new(
            vec![1; 4],
            vec![1; 4],
            [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3)],
        )
        .unwrap()
    }

    #[test]
    fn conv1d_sets_by_hand() {
        let s = conv1d();
        let p = build_partition(&s, 2, &[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        let w0 = p.worker(0);
        let w1 = p.worker(1);
        assert_eq!(w0.local_edges, vec![0]);
        assert_eq!(w0.recv_edges.get(&1), Some(&vec![1]));
        assert_eq!(p.halo(0, 1), &[2]);
        assert_eq!(w0.recv_from, vec![1]);
        assert_eq!(w1.send_to, vec![0]);
        assert_eq!(w1.local_edges, vec![2, 3]);
        assert!(w1.boundary_edges.is_empty());
        assert_eq!(p.edge_touch[1], vec![1]);
        assert!(p.edge_touch[2].is_empty() && p.edge_touch[3].is_empty());
        assert!(validate_partition(&p, &s).is_empty());
    }

    #[test]
    fn diagonal_has_no_communication() {
        let s = OperatorStructure::new(vec![1; 6], vec![1; 6], (0..6).map(|i| (i, i))).unwrap();
        let owner = [0, 1, 2, 0, 1, 2];
        let p = build_partition(&s, 3, &owner, &owner).unwrap();
        for w in &p.workers {
            assert_eq!(w.local_edges, w.edges);
            assert!(w.recv_from.is_empty() && w.send_to.is_empty());
        }
    }

    #[test]
    fn single_worker() {
        let s = conv1d();
        let p = build_partition(&s, 1, &[0; 4], &[0; 4]).unwrap();
        assert_eq!(p.worker(0).local_edges, vec![0, 1, 2, 3]);
        assert!(p.worker(0).boundary_edges.is_empty());
        assert!(p.worker(0).recv_from.is_empty());
    }

    #[test]
    fn build_errors() {
        let s = conv1d();
        assert!(matches!(
            build_partition(&s, 2, &[0, 0, 1, 1], &[0, 0, 0, 1]),
            Err(Error::EmptyHyperedgeIntersection { edge: 2, owner: 0 })
        ));
        assert!(matches!(
            build_partition(&s, 2, &[0, 0, 2, 1], &[0, 0, 1, 1]),
            Err(Error::InvalidOwnerMap(_))
        ));
        assert!(OperatorStructure::new(vec![1; 2], vec![1; 2], [(0, 0)]).is_err());
    }

    #[test]
    fn validate_catches_double_assignment() {
        let s = conv1d();
        let mut p = build_partition(&s, 2, &[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        p.workers[0].vertices.push(2);
        let v = validate_partition(&p, &s);
        assert!(v
            .iter()
            .any(|v| v.invariant == "V_k not a partition" && v.detail.contains("vertex 2")));
    }

    #[test]
    fn validate_catches_emptied_receive_set() {
        let s = conv1d();
        let mut p = build_partition(&s, 2, &[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        p.workers[0].recv_edges.get_mut(&1).unwrap().clear();
        let v = validate_partition(&p, &s);
        assert!(v.iter().any(|v| v.invariant == "Ē_k ≠ E_k ⊔ E_Rk"), "{v:?}");
    }

    #[test]
    fn grid_examples() {
        let o = grid_partition_2d(4, 4, 2, 2).unwrap();
        let w0: Vec<usize> = (0..16).filter(|&i| o[i] == 0).collect();
        assert_eq!(w0, vec![0, 1, 4, 5]);
        let o = grid_partition_2d(5, 4, 2, 2).unwrap();
        for r in 0..5 {
            let expect = if r < 3 { 0 } else { 2 };
            assert_eq!(o[r * 4], expect, "row {r}");
        }
        assert!(grid_partition_2d(4, 4, 1, 1)
            .unwrap()
            .iter()
            .all(|&k| k == 0));
        assert!(grid_partition_2d(2, 2, 3, 1).is_err());
    }

    #[test]
    fn grid_range_matches_floor_rule() {
        for len in 1..20 {
            for parts in 1..=len {
                for r in 0..len {
                    let idx = r * parts / len;
                    let (a, b) = grid_range(len, parts, idx);
                    assert!(a <= r && r < b, "len {len} parts {parts} r {r}");
                }
            }
        }
    }

    #[test]
    fn descriptor_json_roundtrip() {
        let s = conv1d();
        let p = build_partition(&s, 2, &[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        let json = p.descriptor().to_json().unwrap();
        assert!(json.contains("\"K\":2"));
        let q = PartitionDescriptor::from_json(&json)
            .unwrap()
            .build(&s)
            .unwrap();
        assert_eq!(p, q);
    }
}
