//! The MODL cost of an image graph, `c(IG) = -ln[P(IG) P(G | IG)]`, itemized
//! per prior and likelihood term, and exact merge deltas.
//!
//! A merge delta only reads the nonzero cells of its two operands plus a few
//! scalar lookups, so the optimizer can evaluate every candidate merge on a
//! pass in time proportional to the number of nonzero cells.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{CombinatoricsTable, LogFactorials, StirlingPath, StirlingRow};
use crate::error::{Error, Result};
use crate::model::{ClusterId, ImageGraphModel, Merge, MergeKind, ModelBasis, SegmentId, Side};
use crate::scalar::{CompensatedSum, Real};

/// Itemized cost of a model, in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriterionBreakdown<T> {
    /// `ln|V_S| + ln|V_T| + ln|E|`
    pub prior_counts: T,
    /// `ln B(|V_S|, K_S) + ln B(|V_T|, K_T)`
    pub prior_partitions: T,
    /// `ln C(|E| + K_S K_T N - 1, K_S K_T N - 1)`
    pub prior_cells: T,
    /// Spread of each cluster's degree over its vertices, both sides.
    pub prior_degrees: T,
    /// `ln|E|! - Σ ln|e(c_i, c_j, I_n)|!`
    pub lik_cells: T,
    /// `Σ ln d(c)! - Σ ln d(v)!`, both sides.
    pub lik_degrees: T,
    /// `Σ ln|I_n|!`
    pub lik_time: T,
    pub total: T,
    pub stirling_path: StirlingPath,
}

impl<T: Real> CriterionBreakdown<T> {
    pub fn components(&self) -> [T; 7] {
        [
            self.prior_counts,
            self.prior_partitions,
            self.prior_cells,
            self.prior_degrees,
            self.lik_cells,
            self.lik_degrees,
            self.lik_time,
        ]
    }

    pub fn prior(&self) -> T {
        self.prior_counts + self.prior_partitions + self.prior_cells + self.prior_degrees
    }

    pub fn likelihood(&self) -> T {
        self.lik_cells + self.lik_degrees + self.lik_time
    }

    fn sum_components(&self) -> T {
        self.components().into_iter().collect::<CompensatedSum<T>>().value()
    }

    /// Adds an itemized delta in place.
    pub fn apply(&mut self, d: &TermDelta<T>) {
        self.prior_partitions = self.prior_partitions + d.prior_partitions;
        self.prior_cells = self.prior_cells + d.prior_cells;
        self.prior_degrees = self.prior_degrees + d.prior_degrees;
        self.lik_cells = self.lik_cells + d.lik_cells;
        self.lik_degrees = self.lik_degrees + d.lik_degrees;
        self.lik_time = self.lik_time + d.lik_time;
        self.total = self.sum_components();
    }
}

/// Change of each cost term under one merge; `prior_counts` never changes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermDelta<T> {
    pub prior_partitions: T,
    pub prior_cells: T,
    pub prior_degrees: T,
    pub lik_cells: T,
    pub lik_degrees: T,
    pub lik_time: T,
}

impl<T: Real> TermDelta<T> {
    pub fn total(&self) -> T {
        self.prior_partitions + self.prior_cells + self.prior_degrees + self.lik_cells + self.lik_degrees + self.lik_time
    }
}

/// A candidate merge and its exact cost change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeProposal<T> {
    pub merge: Merge,
    pub delta: T,
    pub terms: TermDelta<T>,
}

impl<T: Real> MergeProposal<T> {
    pub fn kind(&self) -> MergeKind {
        self.merge.kind()
    }

    /// Orders by delta, then by (kind, lower operand, higher operand).
    pub fn cmp_priority(&self, other: &Self) -> std::cmp::Ordering {
        self.delta
            .partial_cmp(&other.delta)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| self.merge.order_key().cmp(&other.merge.order_key()))
    }
}

/// Cost evaluator bound to one model basis.
#[derive(Clone)]
pub struct Criterion<T> {
    table: Arc<CombinatoricsTable<T>>,
    lf: LogFactorials<T>,
    basis: Arc<ModelBasis>,
    prior_counts: T,
    partitions: [Arc<StirlingRow<T>>; 2],
}

impl<T: Real> std::fmt::Debug for Criterion<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Criterion")
            .field("num_edges", &self.basis.num_edges)
            .field("prior_counts", &self.prior_counts)
            .finish()
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Source => 0,
        Side::Target => 1,
    }
}

impl<T: Real> Criterion<T> {
    pub fn new(basis: Arc<ModelBasis>) -> Self {
        Self::with_table(basis, Arc::new(CombinatoricsTable::new()))
    }

    pub fn for_model(model: &ImageGraphModel) -> Self {
        Self::new(model.basis().clone())
    }

    pub fn with_table(basis: Arc<ModelBasis>, table: Arc<CombinatoricsTable<T>>) -> Self {
        let ns = basis.source_names.len();
        let nt = basis.target_names.len();
        let lf = table.snapshot(basis.num_edges + ns.max(nt) as u64 + 1);
        let prior_counts = T::from_count(ns as u64).ln()
            + T::from_count(nt as u64).ln()
            + T::from_count(basis.num_edges.max(1)).ln();
        let partitions = [table.stirling_row(ns.max(1)), table.stirling_row(nt.max(1))];
        Self { table, lf, basis, prior_counts, partitions }
    }

    pub fn basis(&self) -> &Arc<ModelBasis> {
        &self.basis
    }

    pub fn table(&self) -> &Arc<CombinatoricsTable<T>> {
        &self.table
    }

    pub fn log_factorials(&self) -> &LogFactorials<T> {
        &self.lf
    }

    pub fn stirling_path(&self) -> StirlingPath {
        self.partitions[0].path.combine(self.partitions[1].path)
    }

    fn check_basis(&self, model: &ImageGraphModel) -> Result<()> {
        if Arc::ptr_eq(&self.basis, model.basis()) || *self.basis == **model.basis() {
            Ok(())
        } else {
            Err(Error::InconsistentModel("model was built on a different graph than this criterion".into()))
        }
    }

    /// `ln C(|E| + K - 1, K - 1)` with `K = K_S K_T N`.
    pub fn prior_cells(&self, ks: usize, kt: usize, n: usize) -> T {
        let k = (ks as u64) * (kt as u64) * (n as u64);
        self.lf.binomial(self.basis.num_edges + k - 1, k - 1)
    }

    fn log_partitions(&self, side: Side, k: usize) -> T {
        self.partitions[side_index(side)].log_b[k]
    }

    /// Full cost, summed in a canonical order so that structurally equal
    /// models get bit-identical totals.
    pub fn cost(&self, model: &ImageGraphModel) -> Result<CriterionBreakdown<T>> {
        self.check_basis(model)?;
        model.validate()?;
        let lf = &self.lf;
        let (ks, kt, n) = (model.num_source_clusters(), model.num_target_clusters(), model.num_segments());

        let mut prior_degrees = CompensatedSum::new();
        // Grouped per cluster so that a cluster holding a single non-isolated
        // vertex contributes exactly 0 instead of a rounding residue.
        let mut lik_degrees = CompensatedSum::new();
        for side in [Side::Source, Side::Target] {
            let degrees = self.basis.degrees(side);
            for id in model.cluster_ids(side) {
                let d = model.cluster_degree(side, id);
                prior_degrees.add(lf.multiset(d, model.cluster_size(side, id) as u64));
                let members = model.cluster_members(side, id);
                if !members.iter().any(|&v| degrees[v as usize] == d) {
                    let own = members.iter().map(|&v| lf.get(degrees[v as usize])).collect::<CompensatedSum<T>>();
                    lik_degrees.add(lf.get(d) - own.value());
                }
            }
        }
        let mut cell_lf = CompensatedSum::new();
        for c in model.dense_cells() {
            cell_lf.add(lf.get(c.count));
        }
        let mut time = CompensatedSum::new();
        for s in model.segment_ids() {
            time.add(lf.get(model.segment_size(s)));
        }

        let mut b = CriterionBreakdown {
            prior_counts: self.prior_counts,
            prior_partitions: self.log_partitions(Side::Source, ks) + self.log_partitions(Side::Target, kt),
            prior_cells: self.prior_cells(ks, kt, n),
            prior_degrees: prior_degrees.value(),
            lik_cells: lf.get(self.basis.num_edges) - cell_lf.value(),
            lik_degrees: lik_degrees.value(),
            lik_time: time.value(),
            total: T::zero(),
            stirling_path: self.stirling_path(),
        };
        b.total = b.sum_components();
        Ok(b)
    }

    /// `Σ ln(x+y)! - ln x! - ln y!` over keys present in both maps.
    fn shared_gain(&self, a: &crate::model::CellMap, b: &crate::model::CellMap) -> T {
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let lf = &self.lf;
        let mut acc = T::zero();
        for (key, &x) in small {
            if let Some(&y) = large.get(key) {
                acc = acc + (lf.get(x + y) - lf.get(x) - lf.get(y));
            }
        }
        acc
    }

    pub fn delta_merge_clusters(
        &self,
        model: &ImageGraphModel,
        side: Side,
        a: ClusterId,
        b: ClusterId,
    ) -> Result<MergeProposal<T>> {
        if a == b {
            return Err(Error::InvalidMerge(format!("cannot merge {side:?} cluster {} with itself", a.0)));
        }
        if !model.is_live_cluster(side, a) || !model.is_live_cluster(side, b) {
            return Err(Error::InvalidMerge(format!("{side:?} clusters {} and {} are not both live", a.0, b.0)));
        }
        Ok(self.cluster_proposal(model, side, a, b))
    }

    fn cluster_proposal(&self, model: &ImageGraphModel, side: Side, a: ClusterId, b: ClusterId) -> MergeProposal<T> {
        let lf = &self.lf;
        let (ks, kt, n) = (model.num_source_clusters(), model.num_target_clusters(), model.num_segments());
        let (da, db) = (model.cluster_degree(side, a), model.cluster_degree(side, b));
        let (sa, sb) = (model.cluster_size(side, a) as u64, model.cluster_size(side, b) as u64);
        let k_side = model.num_clusters(side);
        let (ks2, kt2) = match side {
            Side::Source => (ks - 1, kt),
            Side::Target => (ks, kt - 1),
        };
        let terms = TermDelta {
            prior_partitions: self.log_partitions(side, k_side - 1) - self.log_partitions(side, k_side),
            prior_cells: self.prior_cells(ks2, kt2, n) - self.prior_cells(ks, kt, n),
            prior_degrees: lf.multiset(da + db, sa + sb) - lf.multiset(da, sa) - lf.multiset(db, sb),
            lik_cells: -self.shared_gain(model.cluster_cells(side, a), model.cluster_cells(side, b)),
            lik_degrees: lf.get(da + db) - lf.get(da) - lf.get(db),
            lik_time: T::zero(),
        };
        MergeProposal { merge: Merge::clusters(side, a, b), delta: terms.total(), terms }
    }

    pub fn delta_merge_segments(
        &self,
        model: &ImageGraphModel,
        left: SegmentId,
        right: SegmentId,
    ) -> Result<MergeProposal<T>> {
        if !model.is_live_segment(left) || model.next_segment(left) != Some(right) {
            return Err(Error::InvalidMerge(format!("segments {} and {} are not adjacent", left.0, right.0)));
        }
        Ok(self.segment_proposal(model, left, right))
    }

    /// Delta of merging dense segment `n` with segment `n + 1`.
    pub fn delta_merge_segment_at(&self, model: &ImageGraphModel, n: usize) -> Result<MergeProposal<T>> {
        let ids = model.segment_ids();
        if n + 1 >= ids.len() {
            return Err(Error::OutOfRange(format!("segment merge at {n} needs n + 1 < N = {}", ids.len())));
        }
        Ok(self.segment_proposal(model, ids[n], ids[n + 1]))
    }

    fn segment_proposal(&self, model: &ImageGraphModel, left: SegmentId, right: SegmentId) -> MergeProposal<T> {
        let lf = &self.lf;
        let (ks, kt, n) = (model.num_source_clusters(), model.num_target_clusters(), model.num_segments());
        let (sl, sr) = (model.segment_size(left), model.segment_size(right));
        let terms = TermDelta {
            prior_partitions: T::zero(),
            prior_cells: self.prior_cells(ks, kt, n - 1) - self.prior_cells(ks, kt, n),
            prior_degrees: T::zero(),
            lik_cells: -self.shared_gain(model.segment_cells(left), model.segment_cells(right)),
            lik_degrees: T::zero(),
            lik_time: lf.get(sl + sr) - lf.get(sl) - lf.get(sr),
        };
        MergeProposal { merge: Merge::Segments { left, right }, delta: terms.total(), terms }
    }

    pub fn delta(&self, model: &ImageGraphModel, merge: Merge) -> Result<MergeProposal<T>> {
        match merge {
            Merge::Clusters { side, a, b } => self.delta_merge_clusters(model, side, a, b),
            Merge::Segments { left, right } => self.delta_merge_segments(model, left, right),
        }
    }

    /// Every candidate merge with its delta, in deterministic order.
    pub fn proposals(&self, model: &ImageGraphModel) -> Vec<MergeProposal<T>> {
        self.filtered_proposals(model, |_| true)
    }

    /// Candidates whose delta is strictly negative.
    pub fn improving_proposals(&self, model: &ImageGraphModel) -> Vec<MergeProposal<T>> {
        self.filtered_proposals(model, |p| p.delta < T::zero())
    }

    pub fn filtered_proposals<F>(&self, model: &ImageGraphModel, keep: F) -> Vec<MergeProposal<T>>
    where
        F: Fn(&MergeProposal<T>) -> bool + Sync,
    {
        let mut out = Vec::new();
        for side in [Side::Source, Side::Target] {
            let ids = model.cluster_ids(side);
            let per_row: Vec<Vec<MergeProposal<T>>> = (0..ids.len())
                .into_par_iter()
                .map(|x| {
                    ids[x + 1..]
                        .iter()
                        .map(|&b| self.cluster_proposal(model, side, ids[x], b))
                        .filter(|p| keep(p))
                        .collect()
                })
                .collect();
            out.extend(per_row.into_iter().flatten());
        }
        let segs = model.segment_ids();
        let seg_props: Vec<MergeProposal<T>> = segs
            .par_windows(2)
            .map(|w| self.segment_proposal(model, w[0], w[1]))
            .filter(|p| keep(p))
            .collect();
        out.extend(seg_props);
        out
    }

    /// The least-delta merge under the deterministic tie order.
    pub fn best_proposal(&self, model: &ImageGraphModel) -> Option<MergeProposal<T>> {
        self.proposals(model).into_iter().min_by(|a, b| a.cmp_priority(b))
    }
}

/// A model with its cost kept up to date incrementally.
#[derive(Clone, Debug)]
pub struct ScoredModel<T> {
    pub model: ImageGraphModel,
    pub breakdown: CriterionBreakdown<T>,
}

impl<T: Real> ScoredModel<T> {
    pub fn new(criterion: &Criterion<T>, model: ImageGraphModel) -> Result<Self> {
        let breakdown = criterion.cost(&model)?;
        Ok(Self { model, breakdown })
    }

    pub fn total(&self) -> T {
        self.breakdown.total
    }

    /// Applies a proposal computed on the current model.
    pub fn apply(&mut self, proposal: &MergeProposal<T>) -> Result<()> {
        self.model.merge(proposal.merge)?;
        self.breakdown.apply(&proposal.terms);
        Ok(())
    }

    /// Replaces the running breakdown by a from-scratch evaluation.
    pub fn rescore(&mut self, criterion: &Criterion<T>) -> Result<()> {
        self.breakdown = criterion.cost(&self.model)?;
        Ok(())
    }
}
