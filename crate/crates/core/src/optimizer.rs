//! Criterion minimization: greedy bottom-up merging wrapped in a variable
//! neighborhood search.
//!
//! A greedy pass evaluates every source-pair, target-pair and
//! adjacent-segment merge exactly, then applies improving merges in order of
//! increasing delta. Only the first one is taken at its enumerated delta;
//! each later merge must not share an operand with a merge already applied
//! on this pass and is re-evaluated on the current model before it is
//! applied, so every applied merge strictly lowers the cost. Descent stops
//! when a pass finds no improving merge, which is exactly the local
//! optimality condition.
//!
//! VNS chains start from the greedy optimum, split `k` random clusters or
//! segments back to their finest granularity, descend again and keep the
//! result if it is better. Chains are independent (one RNG stream each) and
//! their results are reduced by `(cost, chain index)`, so the outcome does
//! not depend on the number of worker threads.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::criterion::{Criterion, ScoredModel};
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::model::{ImageGraphModel, MergeKind, ModelBasis, Partition, Side};
use crate::refine;
use crate::scalar::Real;

/// Upper bound on perturb/descend rounds within one chain.
const MAX_CHAIN_ROUNDS: usize = 64;

const MAX_POLISH_ROUNDS: usize = 100;

/// Forced merges per merge-through step: one per this many live units.
const FORCED_FRACTION: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub vns_restarts: usize,
    pub vns_max_neighborhood: usize,
    pub seed: u64,
    pub pre_aggregation_threshold: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { vns_restarts: 10, vns_max_neighborhood: 3, seed: 1, pre_aggregation_threshold: 10_000 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vns_restarts == 0 {
            return Err(Error::Config("vns_restarts must be at least 1".into()));
        }
        if self.vns_max_neighborhood == 0 {
            return Err(Error::Config("vns_max_neighborhood must be at least 1".into()));
        }
        Ok(())
    }

    /// Overlays `key=value` lines on `self`. `#` starts a comment.
    pub fn merge_key_values(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: std::num::ParseIntError| Error::Config(format!("line {}: {key}: {e}", i + 1));
            match key {
                "vns_restarts" => self.vns_restarts = value.parse().map_err(bad)?,
                "vns_max_neighborhood" => self.vns_max_neighborhood = value.parse().map_err(bad)?,
                "seed" => self.seed = value.parse().map_err(bad)?,
                "pre_aggregation_threshold" => self.pre_aggregation_threshold = value.parse().map_err(bad)?,
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", i + 1))),
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "vns_restarts={}\nvns_max_neighborhood={}\nseed={}\npre_aggregation_threshold={}\n",
            self.vns_restarts, self.vns_max_neighborhood, self.seed, self.pre_aggregation_threshold
        )
    }
}

/// Per-descent statistics.
#[derive(Clone, Debug, Default)]
pub struct DescentStats<T> {
    /// Cost after each pass, starting with the initial cost.
    pub pass_costs: Vec<T>,
    pub merges: usize,
}

/// Seeded generator for chain `stream`; ChaCha streams are stable across platforms.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs greedy bottom-up merging until no merge lowers the cost.
pub fn descend<T: Real>(criterion: &Criterion<T>, start: ScoredModel<T>) -> Result<ScoredModel<T>> {
    descend_with_stats(criterion, start).map(|(m, _)| m)
}

/// One batched sweep: improving merges in priority order, skipping any that
/// shares an operand with a merge already applied in this sweep. With
/// `forced`, at most `limit` merges are applied regardless of sign.
fn sweep<T: Real>(
    criterion: &Criterion<T>,
    current: &mut ScoredModel<T>,
    forced: bool,
    limit: usize,
) -> Result<usize> {
    let mut candidates =
        if forced { criterion.proposals(&current.model) } else { criterion.improving_proposals(&current.model) };
    if candidates.is_empty() {
        return Ok(0);
    }
    candidates.sort_by(|a, b| a.cmp_priority(b));
    let mut touched: FxHashSet<(MergeKind, u32)> = FxHashSet::default();
    let mut applied = 0usize;
    for candidate in candidates {
        if applied == limit {
            break;
        }
        let kind = candidate.kind();
        let (a, b) = candidate.merge.operands();
        if touched.contains(&(kind, a)) || touched.contains(&(kind, b)) {
            continue;
        }
        let fresh = if applied == 0 { candidate } else { criterion.delta(&current.model, candidate.merge)? };
        if forced || fresh.delta < T::zero() {
            current.apply(&fresh)?;
            touched.insert((kind, a));
            touched.insert((kind, b));
            applied += 1;
        }
    }
    Ok(applied)
}

pub fn descend_with_stats<T: Real>(
    criterion: &Criterion<T>,
    mut current: ScoredModel<T>,
) -> Result<(ScoredModel<T>, DescentStats<T>)> {
    let mut stats = DescentStats { pass_costs: vec![current.total()], merges: 0 };
    loop {
        let applied = sweep(criterion, &mut current, false, usize::MAX)?;
        if applied == 0 {
            break;
        }
        stats.merges += applied;
        stats.pass_costs.push(current.total());
    }
    Ok((current, stats))
}

fn live_units(model: &ImageGraphModel) -> usize {
    model.num_source_clusters() + model.num_target_clusters() + model.num_segments()
}

/// Alternates boundary shifts and vertex moves with merge descent until
/// none of them improves.
pub fn polish<T: Real>(
    criterion: &Criterion<T>,
    graph: &TemporalGraph,
    mut current: ScoredModel<T>,
) -> Result<ScoredModel<T>> {
    for _ in 0..MAX_POLISH_ROUNDS {
        let shifted = refine::shift_boundaries(criterion, graph, &mut current)?;
        let moved = refine::move_vertices(criterion, graph, &mut current)?;
        if !shifted && !moved {
            break;
        }
        current = descend(criterion, current)?;
    }
    Ok(current)
}

/// Descent, then merge-through: from each local optimum, force the cheapest
/// non-conflicting merges (a small fraction of the live units), descend
/// again, and so on down to the null model. The best local optimum met on
/// the way is polished and returned, so the result is never worse than
/// plain descent and no single merge improves it.
pub fn greedy_merge<T: Real>(
    criterion: &Criterion<T>,
    graph: &TemporalGraph,
    start: ScoredModel<T>,
) -> Result<ScoredModel<T>> {
    let mut current = descend(criterion, start)?;
    let mut best = current.clone();
    while live_units(&current.model) > 3 {
        let limit = (live_units(&current.model) / FORCED_FRACTION).max(1);
        if sweep(criterion, &mut current, true, limit)? == 0 {
            break;
        }
        current = descend(criterion, current)?;
        if current.total() < best.total() {
            best = current.clone();
        }
    }
    polish(criterion, graph, best)
}

/// Relabels arbitrary cluster labels to `0..K` in order of first appearance.
fn compact(labels: &[u32]) -> Partition {
    let mut map = rustc_hash::FxHashMap::default();
    let assignment = labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect();
    Partition::new(assignment).expect("compacted labels have no gaps")
}

#[derive(Clone, Copy, Debug)]
enum Unit {
    Cluster(Side, u32),
    Segment(usize),
}

/// Binds a graph, its criterion and a configuration.
pub struct Optimizer<'g, T> {
    graph: &'g TemporalGraph,
    basis: Arc<ModelBasis>,
    criterion: Criterion<T>,
    config: OptimizerConfig,
}

impl<'g, T: Real> Optimizer<'g, T> {
    pub fn new(graph: &'g TemporalGraph, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        if graph.num_edges() == 0 {
            return Err(Error::EmptyGraph);
        }
        let basis = Arc::new(ModelBasis::from_graph(graph));
        let criterion = Criterion::new(basis.clone());
        Ok(Self { graph, basis, criterion, config })
    }

    pub fn with_criterion(graph: &'g TemporalGraph, criterion: Criterion<T>, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        if graph.num_edges() == 0 {
            return Err(Error::EmptyGraph);
        }
        let basis = criterion.basis().clone();
        if basis.num_edges != graph.num_edges() as u64 {
            return Err(Error::InconsistentModel("criterion basis does not describe this graph".into()));
        }
        Ok(Self { graph, basis, criterion, config })
    }

    pub fn criterion(&self) -> &Criterion<T> {
        &self.criterion
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn graph(&self) -> &TemporalGraph {
        self.graph
    }

    pub fn score(&self, model: ImageGraphModel) -> Result<ScoredModel<T>> {
        ScoredModel::new(&self.criterion, model)
    }

    pub fn finest(&self) -> Result<ScoredModel<T>> {
        self.score(ImageGraphModel::finest_with_basis(self.graph, self.basis.clone())?)
    }

    pub fn null(&self) -> Result<ScoredModel<T>> {
        let g = self.graph;
        self.score(ImageGraphModel::from_parts_with_basis(
            g,
            self.basis.clone(),
            &Partition::single(g.num_sources()),
            &Partition::single(g.num_targets()),
            &[0],
        )?)
    }

    /// The finest model, except that a side with more vertices than the
    /// pre-aggregation threshold starts from `⌈√|E|⌉` random groups.
    pub fn start_model(&self, rng: &mut ChaCha8Rng) -> Result<ScoredModel<T>> {
        let g = self.graph;
        let groups = ((g.num_edges() as f64).sqrt().ceil() as u32).max(1);
        let mut side_partition = |n: usize| {
            if n > self.config.pre_aggregation_threshold {
                let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..groups)).collect();
                compact(&labels)
            } else {
                Partition::singletons(n)
            }
        };
        let sources = side_partition(g.num_sources());
        let targets = side_partition(g.num_targets());
        let starts: Vec<u64> = g.run_starts().iter().map(|&s| u64::from(s)).collect();
        self.score(ImageGraphModel::from_parts_with_basis(g, self.basis.clone(), &sources, &targets, &starts)?)
    }

    pub fn greedy_merge(&self, start: ScoredModel<T>) -> Result<ScoredModel<T>> {
        greedy_merge(&self.criterion, self.graph, start)
    }

    /// Splits `neighborhood_size` random clusters or segments (those that
    /// can be split) back to singletons / single timestamp runs.
    pub fn perturb(&self, model: &ImageGraphModel, neighborhood_size: usize, rng: &mut ChaCha8Rng) -> Result<ImageGraphModel> {
        if neighborhood_size == 0 {
            return Err(Error::OutOfRange("neighborhood size must be at least 1".into()));
        }
        let g = self.graph;
        let mut src = model.source_partition().assignment().to_vec();
        let mut tgt = model.target_partition().assignment().to_vec();
        let seg = model.segmentation();
        let runs = g.run_starts();

        let mut units = Vec::new();
        for side in [Side::Source, Side::Target] {
            for (dense, id) in model.cluster_ids(side).into_iter().enumerate() {
                if model.cluster_size(side, id) > 1 {
                    units.push(Unit::Cluster(side, dense as u32));
                }
            }
        }
        let seg_sizes = seg.sizes();
        let run_range = |n: usize| {
            let lo = seg.starts()[n] as u32;
            let hi = (seg.starts()[n] + seg_sizes[n]) as u32;
            runs.partition_point(|&r| r < lo)..runs.partition_point(|&r| r < hi)
        };
        for n in 0..seg.num_segments() {
            if run_range(n).len() > 1 {
                units.push(Unit::Segment(n));
            }
        }
        if units.is_empty() {
            return Ok(model.clone());
        }
        let take = neighborhood_size.min(units.len());
        let (chosen, _) = units.partial_shuffle(rng, take);

        let mut starts: Vec<u64> = seg.starts().to_vec();
        for unit in chosen.iter() {
            match *unit {
                Unit::Cluster(side, c) => {
                    let labels = match side {
                        Side::Source => &mut src,
                        Side::Target => &mut tgt,
                    };
                    let mut next = labels.len() as u32 + labels.iter().copied().max().unwrap_or(0);
                    let mut first = true;
                    for l in labels.iter_mut().filter(|l| **l == c) {
                        if !first {
                            *l = next;
                            next += 1;
                        }
                        first = false;
                    }
                }
                Unit::Segment(n) => starts.extend(runs[run_range(n)].iter().map(|&r| u64::from(r))),
            }
        }
        starts.sort_unstable();
        starts.dedup();
        ImageGraphModel::from_parts_with_basis(g, self.basis.clone(), &compact(&src), &compact(&tgt), &starts)
    }

    fn improves(candidate: T, incumbent: T) -> bool {
        candidate < incumbent - T::lit(1e-12) * incumbent.abs()
    }

    fn vns_chain(&self, base: &ScoredModel<T>, stream: u64) -> Result<ScoredModel<T>> {
        let mut rng = chain_rng(self.config.seed, stream);
        let mut current = base.clone();
        let mut k = 1usize;
        let mut rounds = 0usize;
        while k <= self.config.vns_max_neighborhood && rounds < MAX_CHAIN_ROUNDS {
            rounds += 1;
            let perturbed = self.perturb(&current.model, k, &mut rng)?;
            let candidate = self.greedy_merge(self.score(perturbed)?)?;
            if Self::improves(candidate.total(), current.total()) {
                current = candidate;
                k = 1;
            } else {
                k *= 2;
            }
        }
        Ok(current)
    }

    /// Greedy descent from the start model followed by `vns_restarts - 1`
    /// independent VNS chains; returns the best model found, rescored from
    /// scratch.
    pub fn optimize(&self) -> Result<ScoredModel<T>> {
        let mut rng = chain_rng(self.config.seed, 0);
        let base = self.greedy_merge(self.start_model(&mut rng)?)?;
        let chains: Vec<ScoredModel<T>> = (1..self.config.vns_restarts as u64)
            .into_par_iter()
            .map(|r| self.vns_chain(&base, r))
            .collect::<Result<_>>()?;
        let mut best = base;
        for candidate in chains {
            if Self::improves(candidate.total(), best.total()) {
                best = candidate;
            }
        }
        best.rescore(&self.criterion)?;
        Ok(best)
    }
}

/// Fits a model to `graph` with the given configuration.
pub fn vns_optimize<T: Real>(graph: &TemporalGraph, config: &OptimizerConfig) -> Result<ScoredModel<T>> {
    Optimizer::new(graph, config.clone())?.optimize()
}
