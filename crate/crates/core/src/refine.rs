//! Local moves that merges cannot express: shifting a segment boundary and
//! moving a single vertex to another cluster.
//!
//! Bottom-up merging fixes boundaries and memberships early, while the
//! cells are still sparse; these moves let a converged model correct them.
//! Move deltas are exact and incremental. Accepted moves are applied by
//! rebuilding the model from dense parts, and a round is kept only if the
//! from-scratch cost actually went down.

use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::criterion::{Criterion, ScoredModel};
use crate::error::Result;
use crate::graph::TemporalGraph;
use crate::model::{pack, ImageGraphModel, ModelBasis, Partition, Side};
use crate::scalar::Real;

/// Dense view of a model against its graph.
struct Dense {
    src: Vec<u32>,
    tgt: Vec<u32>,
    starts: Vec<u64>,
}

impl Dense {
    fn of(model: &ImageGraphModel) -> Self {
        Self {
            src: model.source_partition().assignment().to_vec(),
            tgt: model.target_partition().assignment().to_vec(),
            starts: model.segmentation().starts().to_vec(),
        }
    }

    fn build(&self, graph: &TemporalGraph, basis: &Arc<ModelBasis>) -> Result<ImageGraphModel> {
        let src = Partition::new(self.src.clone())?;
        let tgt = Partition::new(self.tgt.clone())?;
        ImageGraphModel::from_parts_with_basis(graph, basis.clone(), &src, &tgt, &self.starts)
    }
}

fn rebuild_if_better<T: Real>(
    criterion: &Criterion<T>,
    graph: &TemporalGraph,
    current: &mut ScoredModel<T>,
    dense: &Dense,
) -> Result<bool> {
    let model = dense.build(graph, criterion.basis())?;
    let candidate = ScoredModel::new(criterion, model)?;
    if candidate.total() < current.total() {
        *current = candidate;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// For each pair of adjacent segments, moves their common boundary to the
/// best run start strictly inside their union. Returns whether the model
/// improved.
pub fn shift_boundaries<T: Real>(
    criterion: &Criterion<T>,
    graph: &TemporalGraph,
    current: &mut ScoredModel<T>,
) -> Result<bool> {
    if current.model.num_segments() < 2 {
        return Ok(false);
    }
    let lf = criterion.log_factorials();
    let mut dense = Dense::of(&current.model);
    let runs = graph.run_starts();
    let total = graph.num_edges() as u64;
    let kt = current.model.num_target_clusters() as u64;
    let (src, tgt) = (dense.src.clone(), dense.tgt.clone());
    let key = |pos: u64| {
        let e = graph.edge_at_rank(pos as usize);
        u64::from(src[e.source as usize]) * kt + u64::from(tgt[e.target as usize])
    };
    let mut moved = false;
    for n in 0..dense.starts.len() - 1 {
        let lo = dense.starts[n];
        let hi = dense.starts.get(n + 2).copied().unwrap_or(total);
        let current_b = dense.starts[n + 1];
        let first = runs.partition_point(|&r| u64::from(r) <= lo);
        let last = runs.partition_point(|&r| u64::from(r) < hi);
        if last - first < 2 {
            continue;
        }
        // Cost part that depends on the boundary: Σ ln|I|! - Σ ln e!.
        let mut left: FxHashMap<u64, u64> = FxHashMap::default();
        let mut right: FxHashMap<u64, u64> = FxHashMap::default();
        let first_b = u64::from(runs[first]);
        for pos in lo..first_b {
            *left.entry(key(pos)).or_insert(0) += 1;
        }
        for pos in first_b..hi {
            *right.entry(key(pos)).or_insert(0) += 1;
        }
        let mut score = lf.get(first_b - lo) + lf.get(hi - first_b);
        for &c in left.values().chain(right.values()) {
            score = score - lf.get(c);
        }
        let mut best = (score, first_b);
        let mut at_current = if first_b == current_b { Some(score) } else { None };
        for w in first..last - 1 {
            let (b0, b1) = (u64::from(runs[w]), u64::from(runs[w + 1]));
            for pos in b0..b1 {
                let k = key(pos);
                let l = left.entry(k).or_insert(0);
                *l += 1;
                score = score - T::from_count(*l).ln();
                let r = right.get_mut(&k).expect("edge counted on the right");
                score = score + T::from_count(*r).ln();
                *r -= 1;
            }
            score = score + lf.get(b1 - lo) - lf.get(b0 - lo) + lf.get(hi - b1) - lf.get(hi - b0);
            if b1 == current_b {
                at_current = Some(score);
            }
            if score < best.0 {
                best = (score, b1);
            }
        }
        let reference = at_current.expect("the current boundary is a run start");
        let margin = T::lit(1e-9) * reference.abs().max(T::one());
        if best.1 != current_b && best.0 < reference - margin {
            dense.starts[n + 1] = best.1;
            moved = true;
        }
    }
    if !moved {
        return Ok(false);
    }
    rebuild_if_better(criterion, graph, current, &dense)
}

/// Moves single vertices between clusters of the same side when that lowers
/// the cost; moves in one round touch pairwise disjoint clusters, so their
/// deltas add up exactly. A vertex never leaves a singleton cluster (that
/// would be a merge). Returns whether the model improved.
pub fn move_vertices<T: Real>(
    criterion: &Criterion<T>,
    graph: &TemporalGraph,
    current: &mut ScoredModel<T>,
) -> Result<bool> {
    let lf = criterion.log_factorials();
    let mut dense = Dense::of(&current.model);
    let n_seg = dense.starts.len();
    let seg_of_rank = {
        let mut out = vec![0u32; graph.num_edges()];
        let mut n = 0usize;
        for (pos, slot) in out.iter_mut().enumerate() {
            while n + 1 < n_seg && pos as u64 >= dense.starts[n + 1] {
                n += 1;
            }
            *slot = n as u32;
        }
        out
    };
    let mut improved_any = false;
    for side in [Side::Source, Side::Target] {
        let (own, other) = match side {
            Side::Source => (&dense.src, &dense.tgt),
            Side::Target => (&dense.tgt, &dense.src),
        };
        let k = own.iter().copied().max().map_or(0, |m| m as usize + 1);
        if k < 2 {
            continue;
        }
        let nv = own.len();
        let degrees = criterion.basis().degrees(side);
        let mut profile: Vec<FxHashMap<u64, u64>> = vec![FxHashMap::default(); nv];
        let mut cells: Vec<FxHashMap<u64, u64>> = vec![FxHashMap::default(); k];
        let mut size = vec![0u64; k];
        let mut degree = vec![0u64; k];
        for (v, &c) in own.iter().enumerate() {
            size[c as usize] += 1;
            degree[c as usize] += degrees[v];
        }
        for (pos, &seg) in seg_of_rank.iter().enumerate() {
            let e = graph.edge_at_rank(pos);
            let (v, w) = match side {
                Side::Source => (e.source, e.target),
                Side::Target => (e.target, e.source),
            };
            let key = pack(other[w as usize], seg);
            *profile[v as usize].entry(key).or_insert(0) += 1;
            *cells[own[v as usize] as usize].entry(key).or_insert(0) += 1;
        }
        let ms = |d: u64, m: u64| lf.multiset(d, m);
        let mut candidates: Vec<(T, usize, u32, u32)> = Vec::new();
        for v in 0..nv {
            let a = own[v] as usize;
            let dv = degrees[v];
            if size[a] < 2 || dv == 0 {
                continue;
            }
            let leave = ms(degree[a] - dv, size[a] - 1) - ms(degree[a], size[a]) + lf.get(degree[a] - dv)
                - lf.get(degree[a]);
            let mut leave_cells = T::zero();
            for (key, &p) in &profile[v] {
                let x = cells[a][key];
                leave_cells = leave_cells - (lf.get(x - p) - lf.get(x));
            }
            let mut best: Option<(T, usize)> = None;
            for b in 0..k {
                if b == a {
                    continue;
                }
                let mut delta = leave + leave_cells + ms(degree[b] + dv, size[b] + 1) - ms(degree[b], size[b])
                    + lf.get(degree[b] + dv)
                    - lf.get(degree[b]);
                for (key, &p) in &profile[v] {
                    let y = cells[b].get(key).copied().unwrap_or(0);
                    delta = delta - (lf.get(y + p) - lf.get(y));
                }
                if best.is_none_or(|(d, _)| delta < d) {
                    best = Some((delta, b));
                }
            }
            if let Some((delta, b)) = best {
                let margin = T::lit(1e-9) * current.total().abs();
                if delta < -margin {
                    candidates.push((delta, v, a as u32, b as u32));
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        candidates.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
        let mut touched = vec![false; k];
        let own = match side {
            Side::Source => &mut dense.src,
            Side::Target => &mut dense.tgt,
        };
        for (_, v, a, b) in candidates {
            if touched[a as usize] || touched[b as usize] {
                continue;
            }
            touched[a as usize] = true;
            touched[b as usize] = true;
            own[v] = b;
        }
        if rebuild_if_better(criterion, graph, current, &dense)? {
            improved_any = true;
        }
        dense = Dense::of(&current.model);
    }
    Ok(improved_any)
}
