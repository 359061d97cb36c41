//! Image-graph models: two vertex partitions, a contiguous segmentation of
//! the rank axis, and the sparse tri-cluster count tensor.
//!
//! Clusters and segments are addressed by stable slot handles
//! ([`ClusterId`], [`SegmentId`]) that survive merges; a merge keeps one slot
//! and retires the other. Dense `0..K` indices, as used in exports and
//! reports, are the rank of a live slot among live slots, so slot order and
//! dense order always agree. Segment slots are allocated in time order and a
//! segment merge keeps the left slot, so the same holds for the time axis.
//!
//! Counts are stored three times, indexed by source cluster, target cluster
//! and segment, so every merge and every merge delta touches only the
//! nonzero cells of its operands.

use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;

pub(crate) type CellMap = FxHashMap<u64, u64>;

const NONE: u32 = u32::MAX;

#[inline]
pub(crate) fn pack(hi: u32, lo: u32) -> u64 {
    (u64::from(hi) << 32) | u64::from(lo)
}

#[inline]
pub(crate) fn unpack(key: u64) -> (u32, u32) {
    ((key >> 32) as u32, key as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentId(pub u32);

/// Kind of a merge; the derived order is the tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    Source,
    Target,
    Segment,
}

impl MergeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeKind::Source => "source",
            MergeKind::Target => "target",
            MergeKind::Segment => "segment",
        }
    }
}

/// A structural merge, without its cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Merge {
    /// Merge two clusters of one side; the lower slot survives.
    Clusters { side: Side, a: ClusterId, b: ClusterId },
    /// Merge a segment with its immediate successor; `left` survives.
    Segments { left: SegmentId, right: SegmentId },
}

impl Merge {
    pub fn clusters(side: Side, a: ClusterId, b: ClusterId) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        Merge::Clusters { side, a, b }
    }

    pub fn kind(&self) -> MergeKind {
        match self {
            Merge::Clusters { side: Side::Source, .. } => MergeKind::Source,
            Merge::Clusters { side: Side::Target, .. } => MergeKind::Target,
            Merge::Segments { .. } => MergeKind::Segment,
        }
    }

    /// Raw slot operands, lower first.
    pub fn operands(&self) -> (u32, u32) {
        match *self {
            Merge::Clusters { a, b, .. } => (a.0.min(b.0), a.0.max(b.0)),
            Merge::Segments { left, right } => (left.0, right.0),
        }
    }

    /// Deterministic ordering key used to break ties between equal deltas.
    pub fn order_key(&self) -> (MergeKind, u32, u32) {
        let (a, b) = self.operands();
        (self.kind(), a, b)
    }
}

/// Everything about the input graph a model needs besides its cells: vertex
/// names, per-vertex degrees and the edge count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBasis {
    pub source_names: Vec<String>,
    pub target_names: Vec<String>,
    pub source_degrees: Vec<u64>,
    pub target_degrees: Vec<u64>,
    pub num_edges: u64,
}

impl ModelBasis {
    pub fn from_graph(graph: &TemporalGraph) -> Self {
        Self {
            source_names: graph.source_names().to_vec(),
            target_names: graph.target_names().to_vec(),
            source_degrees: graph.source_degrees().to_vec(),
            target_degrees: graph.target_degrees().to_vec(),
            num_edges: graph.num_edges() as u64,
        }
    }

    pub fn num_vertices(&self, side: Side) -> usize {
        match side {
            Side::Source => self.source_names.len(),
            Side::Target => self.target_names.len(),
        }
    }

    pub fn degrees(&self, side: Side) -> &[u64] {
        match side {
            Side::Source => &self.source_degrees,
            Side::Target => &self.target_degrees,
        }
    }

    pub fn names(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source_names,
            Side::Target => &self.target_names,
        }
    }
}

/// Dense vertex partition: every vertex maps to a cluster in `0..K`, and no
/// cluster is empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<u32>,
    num_clusters: usize,
}

impl Partition {
    pub fn new(assignment: Vec<u32>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InconsistentModel("partition of an empty vertex set".into()));
        }
        let k = assignment.iter().copied().max().unwrap() as usize + 1;
        let mut seen = vec![false; k];
        for &c in &assignment {
            seen[c as usize] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::InconsistentModel(format!("cluster {empty} is empty")));
        }
        Ok(Self { assignment, num_clusters: k })
    }

    pub fn singletons(n: usize) -> Self {
        Self { assignment: (0..n as u32).collect(), num_clusters: n }
    }

    pub fn single(n: usize) -> Self {
        Self { assignment: vec![0; n], num_clusters: 1 }
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_vertices(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, vertex: usize) -> usize {
        self.assignment[vertex] as usize
    }

    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(v as u32);
        }
        out
    }
}

/// Dense segmentation of rank positions `0..|E|` into contiguous intervals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeSegmentation {
    starts: Vec<u64>,
    num_edges: u64,
}

impl TimeSegmentation {
    /// `starts` are 0-based rank positions; the first must be 0.
    pub fn new(starts: Vec<u64>, num_edges: u64) -> Result<Self> {
        if num_edges == 0 {
            return Err(Error::EmptyGraph);
        }
        if starts.first() != Some(&0) {
            return Err(Error::InconsistentModel("segmentation must start at rank position 0".into()));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) || *starts.last().unwrap() >= num_edges {
            return Err(Error::InconsistentModel("segment starts must be increasing and inside 0..|E|".into()));
        }
        Ok(Self { starts, num_edges })
    }

    pub fn num_segments(&self) -> usize {
        self.starts.len()
    }

    pub fn starts(&self) -> &[u64] {
        &self.starts
    }

    pub fn sizes(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.starts.len());
        for (n, &s) in self.starts.iter().enumerate() {
            let end = self.starts.get(n + 1).copied().unwrap_or(self.num_edges);
            out.push(end - s);
        }
        out
    }

    /// Inclusive 1-based rank bounds of segment `n`.
    pub fn rank_bounds(&self, n: usize) -> (u64, u64) {
        let end = self.starts.get(n + 1).copied().unwrap_or(self.num_edges);
        (self.starts[n] + 1, end)
    }
}

/// Segment summary as exported: 1-based inclusive rank bounds and the
/// timestamp range of the edges inside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentBounds {
    pub first_rank: u64,
    pub last_rank: u64,
    pub size: u64,
    pub t_min: f64,
    pub t_max: f64,
}

/// One nonzero tri-cluster, in dense indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub source: u32,
    pub target: u32,
    pub segment: u32,
    pub count: u64,
}

#[derive(Clone, Debug)]
struct SideState {
    assignment: Vec<u32>,
    members: Vec<Vec<u32>>,
    degree: Vec<u64>,
    alive: Vec<bool>,
    live: usize,
}

impl SideState {
    fn from_partition(partition: &Partition, vertex_degrees: &[u64]) -> Self {
        let members = partition.members();
        let mut degree = vec![0u64; members.len()];
        for (v, &c) in partition.assignment().iter().enumerate() {
            degree[c as usize] += vertex_degrees[v];
        }
        Self {
            assignment: partition.assignment().to_vec(),
            alive: vec![true; members.len()],
            live: members.len(),
            members,
            degree,
        }
    }

    fn live_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.alive.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i as u32)
    }

    fn dense_map(&self) -> Vec<u32> {
        dense_map(&self.alive)
    }
}

fn dense_map(alive: &[bool]) -> Vec<u32> {
    let mut next = 0u32;
    alive
        .iter()
        .map(|&a| {
            if a {
                next += 1;
                next - 1
            } else {
                NONE
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct SegmentState {
    start: Vec<u64>,
    size: Vec<u64>,
    t_min: Vec<f64>,
    t_max: Vec<f64>,
    next: Vec<u32>,
    alive: Vec<bool>,
    live: usize,
}

#[derive(Clone, Debug, Default)]
struct CellStore {
    /// source slot -> (target slot, segment slot) -> count
    by_source: Vec<CellMap>,
    /// target slot -> (source slot, segment slot) -> count
    by_target: Vec<CellMap>,
    /// segment slot -> (source slot, target slot) -> count
    by_segment: Vec<CellMap>,
    nonzero: usize,
}

impl CellStore {
    fn with_slots(sources: usize, targets: usize, segments: usize) -> Self {
        Self {
            by_source: vec![CellMap::default(); sources],
            by_target: vec![CellMap::default(); targets],
            by_segment: vec![CellMap::default(); segments],
            nonzero: 0,
        }
    }

    fn add(&mut self, i: u32, j: u32, n: u32, count: u64) {
        let slot = self.by_source[i as usize].entry(pack(j, n)).or_insert(0);
        if *slot == 0 {
            self.nonzero += 1;
        }
        *slot += count;
        *self.by_target[j as usize].entry(pack(i, n)).or_insert(0) += count;
        *self.by_segment[n as usize].entry(pack(i, j)).or_insert(0) += count;
    }
}

/// A candidate solution: partitions of both vertex sets, a time
/// segmentation and the tri-cluster counts, with cached marginals.
#[derive(Clone, Debug)]
pub struct ImageGraphModel {
    basis: Arc<ModelBasis>,
    sources: SideState,
    targets: SideState,
    segments: SegmentState,
    cells: CellStore,
}

impl ImageGraphModel {
    /// One cluster per vertex and one segment per distinct timestamp.
    pub fn finest(graph: &TemporalGraph) -> Result<Self> {
        Self::finest_with_basis(graph, Arc::new(ModelBasis::from_graph(graph)))
    }

    pub fn finest_with_basis(graph: &TemporalGraph, basis: Arc<ModelBasis>) -> Result<Self> {
        let starts: Vec<u64> = graph.run_starts().iter().map(|&s| u64::from(s)).collect();
        Self::from_parts_with_basis(
            graph,
            basis,
            &Partition::singletons(graph.num_sources()),
            &Partition::singletons(graph.num_targets()),
            &starts,
        )
    }

    /// A single cluster per side and a single segment.
    pub fn null(graph: &TemporalGraph) -> Result<Self> {
        Self::from_parts(
            graph,
            &Partition::single(graph.num_sources()),
            &Partition::single(graph.num_targets()),
            &[0],
        )
    }

    /// Builds a model from explicit partitions and 0-based segment starts.
    /// Every start must begin a run of equal timestamps.
    pub fn from_parts(
        graph: &TemporalGraph,
        source_partition: &Partition,
        target_partition: &Partition,
        segment_starts: &[u64],
    ) -> Result<Self> {
        Self::from_parts_with_basis(
            graph,
            Arc::new(ModelBasis::from_graph(graph)),
            source_partition,
            target_partition,
            segment_starts,
        )
    }

    pub fn from_parts_with_basis(
        graph: &TemporalGraph,
        basis: Arc<ModelBasis>,
        source_partition: &Partition,
        target_partition: &Partition,
        segment_starts: &[u64],
    ) -> Result<Self> {
        let num_edges = graph.num_edges() as u64;
        if num_edges == 0 {
            return Err(Error::EmptyGraph);
        }
        if basis.num_edges != num_edges
            || basis.source_names.len() != graph.num_sources()
            || basis.target_names.len() != graph.num_targets()
        {
            return Err(Error::InconsistentModel("model basis does not describe this graph".into()));
        }
        if source_partition.num_vertices() != graph.num_sources()
            || target_partition.num_vertices() != graph.num_targets()
        {
            return Err(Error::InconsistentModel("partition size differs from the vertex set size".into()));
        }
        let segmentation = TimeSegmentation::new(segment_starts.to_vec(), num_edges)?;
        for &s in segment_starts {
            if !graph.is_run_start(s as usize) {
                return Err(Error::InconsistentModel(format!(
                    "segment boundary at rank {} splits edges sharing a timestamp",
                    s + 1
                )));
            }
        }

        let sources = SideState::from_partition(source_partition, graph.source_degrees());
        let targets = SideState::from_partition(target_partition, graph.target_degrees());
        let n_seg = segmentation.num_segments();
        let sizes = segmentation.sizes();
        let mut segments = SegmentState {
            start: segmentation.starts().to_vec(),
            size: sizes,
            t_min: vec![0.0; n_seg],
            t_max: vec![0.0; n_seg],
            next: (1..=n_seg as u32).map(|n| if n as usize == n_seg { NONE } else { n }).collect(),
            alive: vec![true; n_seg],
            live: n_seg,
        };
        let mut cells = CellStore::with_slots(sources.members.len(), targets.members.len(), n_seg);
        let mut seg = 0usize;
        for pos in 0..graph.num_edges() {
            if seg + 1 < n_seg && pos as u64 == segments.start[seg + 1] {
                seg += 1;
            }
            let e = graph.edge_at_rank(pos);
            if pos as u64 == segments.start[seg] {
                segments.t_min[seg] = e.timestamp;
            }
            segments.t_max[seg] = e.timestamp;
            cells.add(
                sources.assignment[e.source as usize],
                targets.assignment[e.target as usize],
                seg as u32,
                1,
            );
        }
        Ok(Self { basis, sources, targets, segments, cells })
    }

    /// Rebuilds a model from dense parts, e.g. when importing an exported
    /// document. Counts are checked against the basis degrees.
    pub fn from_dense(
        basis: Arc<ModelBasis>,
        source_partition: &Partition,
        target_partition: &Partition,
        segments: &[SegmentBounds],
        cells: &[Cell],
    ) -> Result<Self> {
        if basis.num_edges == 0 {
            return Err(Error::EmptyGraph);
        }
        if source_partition.num_vertices() != basis.source_names.len()
            || target_partition.num_vertices() != basis.target_names.len()
        {
            return Err(Error::InconsistentModel("partition size differs from the vertex set size".into()));
        }
        let starts: Vec<u64> = segments.iter().map(|s| s.first_rank.saturating_sub(1)).collect();
        let segmentation = TimeSegmentation::new(starts, basis.num_edges)?;
        let sizes = segmentation.sizes();
        for (n, s) in segments.iter().enumerate() {
            if s.size != sizes[n] || s.last_rank != s.first_rank + s.size - 1 {
                return Err(Error::InconsistentModel(format!("segment {n} bounds and size disagree")));
            }
        }
        let n_seg = segments.len();
        let seg_state = SegmentState {
            start: segmentation.starts().to_vec(),
            size: sizes,
            t_min: segments.iter().map(|s| s.t_min).collect(),
            t_max: segments.iter().map(|s| s.t_max).collect(),
            next: (1..=n_seg as u32).map(|n| if n as usize == n_seg { NONE } else { n }).collect(),
            alive: vec![true; n_seg],
            live: n_seg,
        };
        let src = SideState::from_partition(source_partition, &basis.source_degrees);
        let tgt = SideState::from_partition(target_partition, &basis.target_degrees);
        let mut store = CellStore::with_slots(src.members.len(), tgt.members.len(), n_seg);
        for c in cells {
            if c.source as usize >= src.members.len()
                || c.target as usize >= tgt.members.len()
                || c.segment as usize >= n_seg
            {
                return Err(Error::InconsistentModel(format!("cell {c:?} is out of range")));
            }
            if c.count > 0 {
                store.add(c.source, c.target, c.segment, c.count);
            }
        }
        let model = Self { basis, sources: src, targets: tgt, segments: seg_state, cells: store };
        model.validate()?;
        Ok(model)
    }

    /// The same model with slots renumbered so that slot ids equal dense indices.
    pub fn compacted(&self) -> Self {
        Self::from_dense(
            self.basis.clone(),
            &self.source_partition(),
            &self.target_partition(),
            &self.segment_bounds(),
            &self.dense_cells(),
        )
        .expect("a valid model survives a dense round trip")
    }

    /// The model with one cluster per side and one segment over the same basis.
    pub fn null_model(&self) -> Self {
        let ns = self.basis.source_names.len();
        let nt = self.basis.target_names.len();
        let e = self.basis.num_edges;
        let t_min = self.live_segments().map(|s| self.segments.t_min[s as usize]).fold(f64::INFINITY, f64::min);
        let t_max =
            self.live_segments().map(|s| self.segments.t_max[s as usize]).fold(f64::NEG_INFINITY, f64::max);
        let mut cells = CellStore::with_slots(1, 1, 1);
        cells.add(0, 0, 0, e);
        Self {
            basis: self.basis.clone(),
            sources: SideState::from_partition(&Partition::single(ns), &self.basis.source_degrees),
            targets: SideState::from_partition(&Partition::single(nt), &self.basis.target_degrees),
            segments: SegmentState {
                start: vec![0],
                size: vec![e],
                t_min: vec![t_min],
                t_max: vec![t_max],
                next: vec![NONE],
                alive: vec![true],
                live: 1,
            },
            cells,
        }
    }

    pub fn basis(&self) -> &Arc<ModelBasis> {
        &self.basis
    }

    pub fn num_edges(&self) -> u64 {
        self.basis.num_edges
    }

    fn side(&self, side: Side) -> &SideState {
        match side {
            Side::Source => &self.sources,
            Side::Target => &self.targets,
        }
    }

    pub fn num_clusters(&self, side: Side) -> usize {
        self.side(side).live
    }

    pub fn num_source_clusters(&self) -> usize {
        self.sources.live
    }

    pub fn num_target_clusters(&self) -> usize {
        self.targets.live
    }

    pub fn num_segments(&self) -> usize {
        self.segments.live
    }

    pub fn num_nonzero_cells(&self) -> usize {
        self.cells.nonzero
    }

    /// Live clusters of one side, in dense order.
    pub fn cluster_ids(&self, side: Side) -> Vec<ClusterId> {
        self.side(side).live_ids().map(ClusterId).collect()
    }

    pub fn is_live_cluster(&self, side: Side, id: ClusterId) -> bool {
        self.side(side).alive.get(id.0 as usize).copied().unwrap_or(false)
    }

    pub fn cluster_size(&self, side: Side, id: ClusterId) -> usize {
        self.side(side).members[id.0 as usize].len()
    }

    pub fn cluster_degree(&self, side: Side, id: ClusterId) -> u64 {
        self.side(side).degree[id.0 as usize]
    }

    pub fn cluster_members(&self, side: Side, id: ClusterId) -> &[u32] {
        &self.side(side).members[id.0 as usize]
    }

    /// Current cluster of a vertex.
    pub fn cluster_of(&self, side: Side, vertex: usize) -> ClusterId {
        ClusterId(self.side(side).assignment[vertex])
    }

    fn live_segments(&self) -> impl Iterator<Item = u32> + '_ {
        self.segments.alive.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i as u32)
    }

    /// Live segments in time order.
    pub fn segment_ids(&self) -> Vec<SegmentId> {
        self.live_segments().map(SegmentId).collect()
    }

    pub fn is_live_segment(&self, id: SegmentId) -> bool {
        self.segments.alive.get(id.0 as usize).copied().unwrap_or(false)
    }

    pub fn segment_size(&self, id: SegmentId) -> u64 {
        self.segments.size[id.0 as usize]
    }

    pub fn next_segment(&self, id: SegmentId) -> Option<SegmentId> {
        let n = self.segments.next[id.0 as usize];
        (n != NONE).then_some(SegmentId(n))
    }

    /// Dense index of a live cluster.
    pub fn dense_cluster_index(&self, side: Side, id: ClusterId) -> usize {
        self.side(side).alive[..id.0 as usize].iter().filter(|&&a| a).count()
    }

    pub fn dense_segment_index(&self, id: SegmentId) -> usize {
        self.segments.alive[..id.0 as usize].iter().filter(|&&a| a).count()
    }

    pub(crate) fn cluster_cells(&self, side: Side, id: ClusterId) -> &CellMap {
        match side {
            Side::Source => &self.cells.by_source[id.0 as usize],
            Side::Target => &self.cells.by_target[id.0 as usize],
        }
    }

    pub(crate) fn segment_cells(&self, id: SegmentId) -> &CellMap {
        &self.cells.by_segment[id.0 as usize]
    }

    /// Count of the cell (source cluster, target cluster, segment), by slot.
    pub fn cell_count(&self, source: ClusterId, target: ClusterId, segment: SegmentId) -> u64 {
        self.cells
            .by_source
            .get(source.0 as usize)
            .and_then(|m| m.get(&pack(target.0, segment.0)))
            .copied()
            .unwrap_or(0)
    }

    pub fn partition(&self, side: Side) -> Partition {
        let s = self.side(side);
        let dense = s.dense_map();
        Partition {
            assignment: s.assignment.iter().map(|&slot| dense[slot as usize]).collect(),
            num_clusters: s.live,
        }
    }

    pub fn source_partition(&self) -> Partition {
        self.partition(Side::Source)
    }

    pub fn target_partition(&self) -> Partition {
        self.partition(Side::Target)
    }

    pub fn segmentation(&self) -> TimeSegmentation {
        TimeSegmentation {
            starts: self.live_segments().map(|s| self.segments.start[s as usize]).collect(),
            num_edges: self.basis.num_edges,
        }
    }

    pub fn segment_bounds(&self) -> Vec<SegmentBounds> {
        self.live_segments()
            .map(|s| {
                let s = s as usize;
                SegmentBounds {
                    first_rank: self.segments.start[s] + 1,
                    last_rank: self.segments.start[s] + self.segments.size[s],
                    size: self.segments.size[s],
                    t_min: self.segments.t_min[s],
                    t_max: self.segments.t_max[s],
                }
            })
            .collect()
    }

    /// Nonzero cells in dense indices, sorted by (source, target, segment).
    pub fn dense_cells(&self) -> Vec<Cell> {
        let src = self.sources.dense_map();
        let tgt = self.targets.dense_map();
        let seg = dense_map(&self.segments.alive);
        let mut out = Vec::with_capacity(self.cells.nonzero);
        for i in self.sources.live_ids() {
            for (&key, &count) in &self.cells.by_source[i as usize] {
                let (j, n) = unpack(key);
                out.push(Cell { source: src[i as usize], target: tgt[j as usize], segment: seg[n as usize], count });
            }
        }
        out.sort_unstable();
        out
    }

    /// Copy-on-merge: returns a new model with `merge` applied.
    pub fn apply_merge(&self, merge: Merge) -> Result<Self> {
        let mut next = self.clone();
        next.merge(merge)?;
        Ok(next)
    }

    /// Applies `merge` in place.
    pub fn merge(&mut self, merge: Merge) -> Result<()> {
        match merge {
            Merge::Clusters { side, a, b } => self.merge_clusters(side, a, b),
            Merge::Segments { left, right } => self.merge_segments(left, right),
        }
    }

    pub fn merge_clusters(&mut self, side: Side, a: ClusterId, b: ClusterId) -> Result<()> {
        if a == b {
            return Err(Error::InvalidMerge(format!("cannot merge {side:?} cluster {} with itself", a.0)));
        }
        if !self.is_live_cluster(side, a) || !self.is_live_cluster(side, b) {
            return Err(Error::InvalidMerge(format!("{side:?} clusters {} and {} are not both live", a.0, b.0)));
        }
        let (keep, gone) = if a < b { (a.0, b.0) } else { (b.0, a.0) };
        let cells = &mut self.cells;
        match side {
            Side::Source => {
                let moved = std::mem::take(&mut cells.by_source[gone as usize]);
                for (key, e) in moved {
                    let (j, n) = unpack(key);
                    let slot = cells.by_source[keep as usize].entry(key).or_insert(0);
                    if *slot > 0 {
                        cells.nonzero -= 1;
                    }
                    *slot += e;
                    let by_t = &mut cells.by_target[j as usize];
                    by_t.remove(&pack(gone, n));
                    *by_t.entry(pack(keep, n)).or_insert(0) += e;
                    let by_n = &mut cells.by_segment[n as usize];
                    by_n.remove(&pack(gone, j));
                    *by_n.entry(pack(keep, j)).or_insert(0) += e;
                }
            }
            Side::Target => {
                let moved = std::mem::take(&mut cells.by_target[gone as usize]);
                for (key, e) in moved {
                    let (i, n) = unpack(key);
                    let slot = cells.by_target[keep as usize].entry(key).or_insert(0);
                    if *slot > 0 {
                        cells.nonzero -= 1;
                    }
                    *slot += e;
                    let by_s = &mut cells.by_source[i as usize];
                    by_s.remove(&pack(gone, n));
                    *by_s.entry(pack(keep, n)).or_insert(0) += e;
                    let by_n = &mut cells.by_segment[n as usize];
                    by_n.remove(&pack(i, gone));
                    *by_n.entry(pack(i, keep)).or_insert(0) += e;
                }
            }
        }
        let s = match side {
            Side::Source => &mut self.sources,
            Side::Target => &mut self.targets,
        };
        let moved = std::mem::take(&mut s.members[gone as usize]);
        for &v in &moved {
            s.assignment[v as usize] = keep;
        }
        s.members[keep as usize].extend(moved);
        s.degree[keep as usize] += s.degree[gone as usize];
        s.degree[gone as usize] = 0;
        s.alive[gone as usize] = false;
        s.live -= 1;
        Ok(())
    }

    pub fn merge_segments(&mut self, left: SegmentId, right: SegmentId) -> Result<()> {
        if !self.is_live_segment(left) || !self.is_live_segment(right) {
            return Err(Error::InvalidMerge(format!("segments {} and {} are not both live", left.0, right.0)));
        }
        if self.segments.next[left.0 as usize] != right.0 {
            return Err(Error::InvalidMerge(format!("segments {} and {} are not adjacent", left.0, right.0)));
        }
        let (l, r) = (left.0, right.0);
        let cells = &mut self.cells;
        let moved = std::mem::take(&mut cells.by_segment[r as usize]);
        for (key, e) in moved {
            let (i, j) = unpack(key);
            let slot = cells.by_segment[l as usize].entry(key).or_insert(0);
            if *slot > 0 {
                cells.nonzero -= 1;
            }
            *slot += e;
            let by_s = &mut cells.by_source[i as usize];
            by_s.remove(&pack(j, r));
            *by_s.entry(pack(j, l)).or_insert(0) += e;
            let by_t = &mut cells.by_target[j as usize];
            by_t.remove(&pack(i, r));
            *by_t.entry(pack(i, l)).or_insert(0) += e;
        }
        let seg = &mut self.segments;
        let (l, r) = (l as usize, r as usize);
        seg.size[l] += seg.size[r];
        seg.size[r] = 0;
        seg.t_min[l] = seg.t_min[l].min(seg.t_min[r]);
        seg.t_max[l] = seg.t_max[l].max(seg.t_max[r]);
        seg.next[l] = seg.next[r];
        seg.alive[r] = false;
        seg.live -= 1;
        Ok(())
    }

    /// Checks every structural invariant; used by tests and on import.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InconsistentModel(m));
        let e_total = self.basis.num_edges;
        for (side, st) in [(Side::Source, &self.sources), (Side::Target, &self.targets)] {
            let degrees = self.basis.degrees(side);
            if st.assignment.len() != degrees.len() {
                return bad(format!("{side:?} assignment covers {} of {} vertices", st.assignment.len(), degrees.len()));
            }
            if st.live != st.alive.iter().filter(|&&a| a).count() || st.live == 0 {
                return bad(format!("{side:?} live cluster count is wrong"));
            }
            let mut deg = vec![0u64; st.alive.len()];
            let mut card = vec![0usize; st.alive.len()];
            for (v, &c) in st.assignment.iter().enumerate() {
                if !st.alive[c as usize] {
                    return bad(format!("{side:?} vertex {v} assigned to dead cluster {c}"));
                }
                deg[c as usize] += degrees[v];
                card[c as usize] += 1;
            }
            for c in 0..st.alive.len() {
                if st.alive[c] && (card[c] == 0 || card[c] != st.members[c].len()) {
                    return bad(format!("{side:?} cluster {c} membership is inconsistent"));
                }
                if deg[c] != st.degree[c] {
                    return bad(format!("{side:?} cluster {c} degree {} != vertex sum {}", st.degree[c], deg[c]));
                }
            }
        }
        let mut seg_total = 0u64;
        let mut expected_start = 0u64;
        let mut cursor = self.live_segments().next();
        let mut visited = 0usize;
        while let Some(s) = cursor {
            let s = s as usize;
            if !self.segments.alive[s] || self.segments.start[s] != expected_start || self.segments.size[s] == 0 {
                return bad(format!("segment {s} breaks contiguity"));
            }
            expected_start += self.segments.size[s];
            seg_total += self.segments.size[s];
            visited += 1;
            let n = self.segments.next[s];
            cursor = (n != NONE).then_some(n);
        }
        if visited != self.segments.live || seg_total != e_total {
            return bad("segments do not cover 0..|E|".into());
        }

        let mut total = 0u64;
        let mut nonzero = 0usize;
        let mut src_deg = vec![0u64; self.sources.alive.len()];
        let mut tgt_deg = vec![0u64; self.targets.alive.len()];
        let mut seg_size = vec![0u64; self.segments.alive.len()];
        for (i, map) in self.cells.by_source.iter().enumerate() {
            for (&key, &e) in map {
                let (j, n) = unpack(key);
                if e == 0 || !self.sources.alive[i] || !self.targets.alive[j as usize] || !self.segments.alive[n as usize] {
                    return bad(format!("stale or zero cell ({i},{j},{n})"));
                }
                if self.cells.by_target[j as usize].get(&pack(i as u32, n)) != Some(&e)
                    || self.cells.by_segment[n as usize].get(&pack(i as u32, j)) != Some(&e)
                {
                    return bad(format!("cell ({i},{j},{n}) indexes disagree"));
                }
                total += e;
                nonzero += 1;
                src_deg[i] += e;
                tgt_deg[j as usize] += e;
                seg_size[n as usize] += e;
            }
        }
        let other: usize = self.cells.by_target.iter().map(|m| m.len()).sum();
        let third: usize = self.cells.by_segment.iter().map(|m| m.len()).sum();
        if other != nonzero || third != nonzero || nonzero != self.cells.nonzero {
            return bad("cell index sizes disagree".into());
        }
        if total != e_total {
            return bad(format!("cells hold {total} edges, expected {e_total}"));
        }
        if src_deg != self.sources.degree || tgt_deg != self.targets.degree {
            return bad("cluster degrees disagree with cell marginals".into());
        }
        for (n, &alive) in self.segments.alive.iter().enumerate() {
            if alive && seg_size[n] != self.segments.size[n] {
                return bad(format!("segment {n} size disagrees with its cells"));
            }
        }
        Ok(())
    }
}
