//! Agglomerative coarsening of a fitted model, informativity, and the
//! Jensen-Shannon reading of merge costs.
//!
//! Coarsening applies the least exact-delta merge at every step. The cost
//! after each step is recomputed from scratch rather than accumulated, so the
//! last step of a full trace lands on the null-model cost bit for bit and
//! its informativity is exactly 0.

use std::io::Write;

use rustc_hash::FxHashMap;

use crate::criterion::{Criterion, MergeProposal};
use crate::error::{Error, Result};
use crate::model::{CellMap, ClusterId, ImageGraphModel, Merge, Side};
use crate::scalar::{CompensatedSum, Real};

/// `(c - c0) / (c* - c0)`: 1 at the optimum, 0 at the null model.
pub fn informativity<T: Real>(cost: T, origin_cost: T, null_cost: T) -> Result<T> {
    let denom = origin_cost - null_cost;
    if denom == T::zero() {
        return Err(Error::NoStructure);
    }
    Ok((cost - null_cost) / denom)
}

/// Informativity of `model` relative to the given optimum and null costs.
pub fn model_informativity<T: Real>(
    criterion: &Criterion<T>,
    model: &ImageGraphModel,
    origin_cost: T,
    null_cost: T,
) -> Result<T> {
    informativity(criterion.cost(model)?.total, origin_cost, null_cost)
}

#[derive(Clone, Debug)]
pub struct CoarseningStep<T> {
    /// The applied merge. Operands are slots of the compacted input model,
    /// i.e. its dense cluster and segment indices; a merge keeps the lower one.
    pub proposal: MergeProposal<T>,
    pub total_cost: T,
    pub tau: T,
}

#[derive(Clone, Debug)]
pub struct CoarseningTrace<T> {
    pub steps: Vec<CoarseningStep<T>>,
    pub origin_cost: T,
    pub null_cost: T,
}

impl<T: Real> CoarseningTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Informativity of the last model in the trace (1 if no step was taken).
    pub fn final_tau(&self) -> T {
        self.steps.last().map_or(T::one(), |s| s.tau)
    }

    /// Tab-separated, one row per step.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step\tmerge_kind\toperand_a\toperand_b\tdelta_nats\ttotal_cost_nats\ttau")?;
        for (i, s) in self.steps.iter().enumerate() {
            let (a, b) = s.proposal.merge.operands();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                s.proposal.kind().as_str(),
                a,
                b,
                s.proposal.delta,
                s.total_cost,
                s.tau
            )?;
        }
        Ok(())
    }
}

/// Walks least-delta merges from `model`; `keep_going` sees each prospective
/// step and decides whether it is taken.
fn coarsen_while<T: Real, F>(
    criterion: &Criterion<T>,
    model: &ImageGraphModel,
    mut keep_going: F,
) -> Result<(ImageGraphModel, CoarseningTrace<T>)>
where
    F: FnMut(&CoarseningStep<T>) -> bool,
{
    let mut current = model.compacted();
    let origin_cost = criterion.cost(&current)?.total;
    let null_cost = criterion.cost(&current.null_model())?.total;
    if origin_cost == null_cost {
        return Err(Error::NoStructure);
    }
    let mut steps = Vec::new();
    while let Some(proposal) = criterion.best_proposal(&current) {
        let next = current.apply_merge(proposal.merge)?;
        let total_cost = criterion.cost(&next)?.total;
        let step = CoarseningStep { proposal, total_cost, tau: informativity(total_cost, origin_cost, null_cost)? };
        if !keep_going(&step) {
            break;
        }
        steps.push(step);
        current = next;
    }
    Ok((current, CoarseningTrace { steps, origin_cost, null_cost }))
}

/// Coarsens all the way down to the null model.
pub fn coarsening_trace<T: Real>(criterion: &Criterion<T>, model: &ImageGraphModel) -> Result<CoarseningTrace<T>> {
    coarsen_while(criterion, model, |_| true).map(|(_, trace)| trace)
}

/// Applies least-delta merges while the informativity stays at or above
/// `target_tau`; returns the last such model and the steps taken.
pub fn coarsen_to_informativity<T: Real>(
    criterion: &Criterion<T>,
    model: &ImageGraphModel,
    target_tau: T,
) -> Result<(ImageGraphModel, CoarseningTrace<T>)> {
    if !(target_tau > T::zero() && target_tau <= T::one()) {
        return Err(Error::OutOfRange(format!("informativity target {target_tau} is outside (0, 1]")));
    }
    coarsen_while(criterion, model, |step| step.tau >= target_tau)
}

/// Weighted Jensen-Shannon divergence `α1·KL(p1‖m) + α2·KL(p2‖m)` with
/// `m = α1·p1 + α2·p2`, in nats.
pub fn js_divergence<T: Real>(p1: &[T], p2: &[T], alpha1: T, alpha2: T) -> Result<T> {
    if p1.len() != p2.len() {
        return Err(Error::OutOfRange(format!("distribution lengths differ ({} vs {})", p1.len(), p2.len())));
    }
    let tol = T::lit(1e-9).max(T::epsilon() * T::from_count(4 * p1.len().max(1) as u64));
    let sums = |p: &[T]| p.iter().copied().collect::<CompensatedSum<T>>().value();
    if (sums(p1) - T::one()).abs() > tol || (sums(p2) - T::one()).abs() > tol {
        return Err(Error::OutOfRange("distributions must sum to 1".into()));
    }
    if alpha1 < T::zero() || alpha2 < T::zero() || (alpha1 + alpha2 - T::one()).abs() > tol {
        return Err(Error::OutOfRange("weights must be non-negative and sum to 1".into()));
    }
    let kl_term = |p: T, m: T| if p > T::zero() { p * (p / m).ln() } else { T::zero() };
    let mut acc = CompensatedSum::new();
    for (&a, &b) in p1.iter().zip(p2) {
        let m = alpha1 * a + alpha2 * b;
        acc.add(alpha1 * kl_term(a, m) + alpha2 * kl_term(b, m));
    }
    Ok(acc.value().max(T::zero()))
}

/// Exact merge delta next to its asymptotic Jensen-Shannon estimates.
///
/// The operand weight `|c|` can be read as edge mass or as vertex count;
/// both readings are reported. For segments the two coincide (segment size
/// in edges).
#[derive(Clone, Copy, Debug)]
pub struct JsDiagnostic<T> {
    pub merge: Merge,
    pub exact_delta: T,
    pub edge_mass: u64,
    pub js_edge_mass: T,
    /// `(m1 + m2) · JS` with weights proportional to edge mass.
    pub estimate_edge_mass: T,
    pub vertex_count: u64,
    pub js_vertex_count: T,
    /// `(n1 + n2) · JS` with weights proportional to vertex count.
    pub estimate_vertex_count: T,
}

impl<T: Real> JsDiagnostic<T> {
    /// `|Δ - (m1+m2)·JS| / |Δ|`.
    pub fn relative_gap(&self) -> T {
        ((self.exact_delta - self.estimate_edge_mass) / self.exact_delta).abs()
    }
}

fn aligned_distributions<T: Real>(a: &CellMap, b: &CellMap) -> (Vec<T>, Vec<T>) {
    let mut keys: Vec<u64> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let mass = |m: &CellMap| m.values().sum::<u64>();
    let (ma, mb) = (T::from_count(mass(a)), T::from_count(mass(b)));
    let get = |m: &CellMap, k: &u64| T::from_count(m.get(k).copied().unwrap_or(0));
    keys.iter().map(|k| (get(a, k) / ma, get(b, k) / mb)).unzip()
}

pub fn js_diagnostic<T: Real>(criterion: &Criterion<T>, model: &ImageGraphModel, merge: Merge) -> Result<JsDiagnostic<T>> {
    let exact = criterion.delta(model, merge)?;
    let (cells_a, cells_b, mass, count) = match merge {
        Merge::Clusters { side, a, b } => (
            model.cluster_cells(side, a),
            model.cluster_cells(side, b),
            (model.cluster_degree(side, a), model.cluster_degree(side, b)),
            (model.cluster_size(side, a) as u64, model.cluster_size(side, b) as u64),
        ),
        Merge::Segments { left, right } => {
            let sizes = (model.segment_size(left), model.segment_size(right));
            (model.segment_cells(left), model.segment_cells(right), sizes, sizes)
        }
    };
    let (p1, p2) = aligned_distributions::<T>(cells_a, cells_b);
    let weights = |(x, y): (u64, u64)| {
        let total = T::from_count(x + y);
        (T::from_count(x) / total, T::from_count(y) / total)
    };
    let (ea, eb) = weights(mass);
    let (va, vb) = weights(count);
    let js_edge_mass = js_divergence(&p1, &p2, ea, eb)?;
    let js_vertex_count = js_divergence(&p1, &p2, va, vb)?;
    Ok(JsDiagnostic {
        merge,
        exact_delta: exact.delta,
        edge_mass: mass.0 + mass.1,
        js_edge_mass,
        estimate_edge_mass: T::from_count(mass.0 + mass.1) * js_edge_mass,
        vertex_count: count.0 + count.1,
        js_vertex_count,
        estimate_vertex_count: T::from_count(count.0 + count.1) * js_vertex_count,
    })
}

/// Diagnostics for every source-pair merge, keyed by dense index pair.
pub fn source_pair_diagnostics<T: Real>(
    criterion: &Criterion<T>,
    model: &ImageGraphModel,
) -> Result<FxHashMap<(usize, usize), JsDiagnostic<T>>> {
    let ids: Vec<ClusterId> = model.cluster_ids(Side::Source);
    let mut out = FxHashMap::default();
    for (x, &a) in ids.iter().enumerate() {
        for (y, &b) in ids.iter().enumerate().skip(x + 1) {
            out.insert((x, y), js_diagnostic(criterion, model, Merge::clusters(Side::Source, a, b))?);
        }
    }
    Ok(out)
}
