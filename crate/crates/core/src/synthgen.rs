//! Synthetic evolving graphs: a patterned generator with planted clusters
//! and time intervals, plus the two transforms that destroy the temporal
//! structure (timestamp shuffle) and all structure (uniform rewire).
//!
//! Source and target vertex sets are the same `v0..v{n-1}` and both carry
//! the full name list, so isolated vertices still count as vertices.
//! All draws go through ChaCha8 with `u32`/`f64` sampling, so the output for
//! a seed is the same on every platform.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{IndexedEdge, TemporalGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    /// Vertex count of each planted cluster.
    pub cluster_sizes: Vec<usize>,
    /// Interval boundaries `b0 < b1 < ... < bk`; interval `i` is `[b_i, b_{i+1})`
    /// and the last one is closed.
    pub intervals: Vec<f64>,
    /// Per interval, per source cluster: the target clusters it connects to.
    pub interval_image_graphs: Vec<Vec<Vec<usize>>>,
    pub noise_fraction: f64,
    pub num_edges: usize,
    pub seed: u64,
}

impl Default for PatternSpec {
    /// Four clusters of 5, 5, 10 and 20 vertices over `[0, 100]` cut at 20,
    /// 30 and 60, with 30% noise. Every interval changes at least one
    /// connection of every cluster relative to its neighbors.
    fn default() -> Self {
        Self {
            cluster_sizes: vec![5, 5, 10, 20],
            intervals: vec![0.0, 20.0, 30.0, 60.0, 100.0],
            interval_image_graphs: vec![
                vec![vec![1], vec![0], vec![3], vec![2]],
                vec![vec![0], vec![1], vec![2, 3], vec![]],
                vec![vec![2], vec![3], vec![0, 1], vec![3]],
                vec![vec![3], vec![2], vec![2], vec![0, 1]],
            ],
            noise_fraction: 0.3,
            num_edges: 8192,
            seed: 1,
        }
    }
}

impl PatternSpec {
    pub fn num_vertices(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    pub fn num_intervals(&self) -> usize {
        self.intervals.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return bad("every cluster needs at least one vertex".into());
        }
        if self.num_vertices() > u32::MAX as usize {
            return bad("too many vertices".into());
        }
        if self.intervals.len() < 2 {
            return bad("at least one interval (two boundaries) is required".into());
        }
        if self.intervals.iter().any(|b| !b.is_finite()) || self.intervals.windows(2).any(|w| w[0] >= w[1]) {
            return bad("interval boundaries must be finite and strictly increasing".into());
        }
        if self.interval_image_graphs.len() != self.num_intervals() {
            return bad(format!(
                "{} image graphs for {} intervals",
                self.interval_image_graphs.len(),
                self.num_intervals()
            ));
        }
        let k = self.cluster_sizes.len();
        for (i, graph) in self.interval_image_graphs.iter().enumerate() {
            if graph.len() != k {
                return bad(format!("image graph {i} lists {} source clusters, expected {k}", graph.len()));
            }
            if graph.iter().flatten().any(|&t| t >= k) {
                return bad(format!("image graph {i} refers to a cluster outside 0..{k}"));
            }
        }
        if !self.interval_image_graphs.iter().flatten().any(|targets| !targets.is_empty()) {
            return bad("no interval connects any cluster".into());
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return bad("noise fraction must lie in [0, 1]".into());
        }
        if self.num_edges == 0 || self.num_edges > u32::MAX as usize {
            return bad("edge count must be in 1..=u32::MAX".into());
        }
        Ok(())
    }

    /// Parses `key=value` lines overriding the default spec. List values are
    /// comma separated; image graphs are `;`-separated intervals of
    /// `|`-separated source clusters, each a space-separated target list.
    pub fn merge_key_values(mut self, text: &str) -> Result<Self> {
        fn list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
            v.split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("{key}: bad element {x:?}"))))
                .collect()
        }
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value: {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let scalar = |what: &str| Error::Config(format!("{key}: {value:?} is not {what}"));
            match key {
                "cluster_sizes" => self.cluster_sizes = list(value, key)?,
                "intervals" => self.intervals = list(value, key)?,
                "interval_image_graphs" => self.interval_image_graphs = parse_image_graphs(value)?,
                "noise_fraction" => self.noise_fraction = value.parse().map_err(|_| scalar("a number"))?,
                "num_edges" => self.num_edges = value.parse().map_err(|_| scalar("an integer"))?,
                "seed" => self.seed = value.parse().map_err(|_| scalar("an integer"))?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// `"1|0|3|2; 0|1|2 3|"` style image graphs.
pub fn parse_image_graphs(text: &str) -> Result<Vec<Vec<Vec<usize>>>> {
    text.split(';')
        .map(|interval| {
            interval
                .split('|')
                .map(|targets| {
                    targets
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad cluster index {t:?}"))))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Planted labels of a patterned graph. Edge indices follow input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vertex_cluster: Vec<usize>,
    pub edge_interval: Vec<usize>,
    pub edge_rewired: Vec<bool>,
}

impl GroundTruth {
    pub fn num_clusters(&self) -> usize {
        self.vertex_cluster.iter().max().map_or(0, |m| m + 1)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W, names: &[String]) -> Result<()> {
        writeln!(out, "# vertices")?;
        writeln!(out, "vertex\tcluster")?;
        for (name, c) in names.iter().zip(&self.vertex_cluster) {
            writeln!(out, "{name}\t{c}")?;
        }
        writeln!(out, "# edges")?;
        writeln!(out, "edge\tinterval\trewired")?;
        for (i, (n, r)) in self.edge_interval.iter().zip(&self.edge_rewired).enumerate() {
            writeln!(out, "{i}\t{n}\t{}", u8::from(*r))?;
        }
        Ok(())
    }
}

pub fn vertex_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

fn locate(bounds: &[f64], t: f64) -> usize {
    let k = bounds.len() - 1;
    bounds[1..k].partition_point(|&b| b <= t)
}

/// Draws `spec.num_edges` edges: a uniform source vertex and timestamp, then
/// a uniform target among the clusters the source cluster connects to in
/// that interval (redrawing if there are none), then rewires the targets of
/// `⌊noise · m⌋` distinct edges uniformly.
pub fn generate_patterned(spec: &PatternSpec) -> Result<(TemporalGraph, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_vertices();
    let mut vertex_cluster = Vec::with_capacity(n);
    let mut members: Vec<Vec<u32>> = Vec::with_capacity(spec.cluster_sizes.len());
    for (c, &size) in spec.cluster_sizes.iter().enumerate() {
        let first = vertex_cluster.len() as u32;
        members.push((first..first + size as u32).collect());
        vertex_cluster.extend(std::iter::repeat_n(c, size));
    }
    let allowed: Vec<Vec<Vec<u32>>> = spec
        .interval_image_graphs
        .iter()
        .map(|graph| {
            graph.iter().map(|targets| targets.iter().flat_map(|&t| members[t].iter().copied()).collect()).collect()
        })
        .collect();

    let (lo, hi) = (spec.intervals[0], *spec.intervals.last().unwrap());
    let m = spec.num_edges;
    let mut edges = Vec::with_capacity(m);
    let mut edge_interval = Vec::with_capacity(m);
    while edges.len() < m {
        let source = rng.gen_range(0..n as u32);
        let timestamp = lo + rng.gen::<f64>() * (hi - lo);
        let interval = locate(&spec.intervals, timestamp);
        let pool = &allowed[interval][vertex_cluster[source as usize]];
        if pool.is_empty() {
            continue;
        }
        let target = pool[rng.gen_range(0..pool.len() as u32) as usize];
        edges.push(IndexedEdge { source, target, timestamp });
        edge_interval.push(interval);
    }

    let noisy = (spec.noise_fraction * m as f64).floor() as usize;
    let mut edge_rewired = vec![false; m];
    for i in index::sample(&mut rng, m, noisy.min(m)).into_vec() {
        edges[i].target = rng.gen_range(0..n as u32);
        edge_rewired[i] = true;
    }

    let names = vertex_names(n);
    let graph = TemporalGraph::from_indexed(names.clone(), names, edges)?;
    Ok((graph, GroundTruth { vertex_cluster, edge_interval, edge_rewired }))
}

/// Same (source, target) pairs and timestamp multiset, with the timestamps
/// randomly reassigned.
pub fn shuffle_timestamps(graph: &TemporalGraph, seed: u64) -> Result<TemporalGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stamps: Vec<f64> = graph.edges().iter().map(|e| e.timestamp).collect();
    stamps.shuffle(&mut rng);
    let edges = graph
        .edges()
        .iter()
        .zip(stamps)
        .map(|(e, timestamp)| IndexedEdge { source: e.source, target: e.target, timestamp })
        .collect();
    TemporalGraph::from_indexed(graph.source_names().to_vec(), graph.target_names().to_vec(), edges)
}

/// Redraws every edge's endpoints uniformly over `V_S × V_T`, keeping timestamps.
pub fn rewire_all(graph: &TemporalGraph, seed: u64) -> Result<TemporalGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, nt) = (graph.num_sources() as u32, graph.num_targets() as u32);
    let edges = graph
        .edges()
        .iter()
        .map(|e| IndexedEdge { source: rng.gen_range(0..ns), target: rng.gen_range(0..nt), timestamp: e.timestamp })
        .collect();
    TemporalGraph::from_indexed(graph.source_names().to_vec(), graph.target_names().to_vec(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_shape() {
        let spec = PatternSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.num_vertices(), 40);
        assert_eq!(spec.num_intervals(), 4);
        assert_eq!(locate(&spec.intervals, 0.0), 0);
        assert_eq!(locate(&spec.intervals, 20.0), 1);
        assert_eq!(locate(&spec.intervals, 59.999), 2);
        assert_eq!(locate(&spec.intervals, 100.0), 3);
    }

    #[test]
    fn noiseless_edges_follow_the_image_graphs() {
        let spec = PatternSpec { noise_fraction: 0.0, num_edges: 2000, ..PatternSpec::default() };
        let (g, truth) = generate_patterned(&spec).unwrap();
        assert_eq!(g.num_edges(), 2000);
        assert_eq!(g.num_sources(), 40);
        for (e, &interval) in g.edges().iter().zip(&truth.edge_interval) {
            let cs = truth.vertex_cluster[e.source as usize];
            let ct = truth.vertex_cluster[e.target as usize];
            assert!(spec.interval_image_graphs[interval][cs].contains(&ct));
            assert_eq!(locate(&spec.intervals, e.timestamp), interval);
        }
        assert!(truth.edge_rewired.iter().all(|r| !r));
    }

    #[test]
    fn noise_count_and_determinism() {
        let spec = PatternSpec { num_edges: 1000, seed: 7, ..PatternSpec::default() };
        let (a, ta) = generate_patterned(&spec).unwrap();
        let (b, tb) = generate_patterned(&spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(ta, tb);
        assert_eq!(ta.edge_rewired.iter().filter(|&&r| r).count(), 300);
        let (c, _) = generate_patterned(&PatternSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn invalid_specs() {
        let none = PatternSpec {
            interval_image_graphs: vec![vec![vec![]; 4]; 4],
            ..PatternSpec::default()
        };
        assert!(matches!(generate_patterned(&none), Err(Error::InvalidSpec(_))));
        let bounds = PatternSpec { intervals: vec![0.0, 50.0, 50.0, 60.0, 100.0], ..PatternSpec::default() };
        assert!(bounds.validate().is_err());
        let noise = PatternSpec { noise_fraction: 1.5, ..PatternSpec::default() };
        assert!(noise.validate().is_err());
    }

    #[test]
    fn key_value_overrides() {
        let spec = PatternSpec::default()
            .merge_key_values("num_edges=64\ncluster_sizes=3,3\nintervals=0,1\ninterval_image_graphs=1|0 1\n")
            .unwrap();
        assert_eq!(spec.cluster_sizes, vec![3, 3]);
        assert_eq!(spec.interval_image_graphs, vec![vec![vec![1], vec![0, 1]]]);
        assert!(PatternSpec::default().merge_key_values("num_edges=0").is_err());
    }

    #[test]
    fn transforms_conserve_what_they_should() {
        let (g, _) = generate_patterned(&PatternSpec { num_edges: 500, ..PatternSpec::default() }).unwrap();
        let s = shuffle_timestamps(&g, 3).unwrap();
        let mut before: Vec<f64> = g.edges().iter().map(|e| e.timestamp).collect();
        let mut after: Vec<f64> = s.edges().iter().map(|e| e.timestamp).collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        assert_eq!(before, after);
        assert!(g.edges().iter().zip(s.edges()).all(|(a, b)| (a.source, a.target) == (b.source, b.target)));

        let r = rewire_all(&s, 4).unwrap();
        assert_eq!(r.num_edges(), 500);
        assert!(s.edges().iter().zip(r.edges()).all(|(a, b)| a.timestamp == b.timestamp));
        assert_eq!(r.edges(), rewire_all(&s, 4).unwrap().edges());

        let one = TemporalGraph::from_indexed(
            vec!["a".into()],
            vec!["b".into()],
            vec![IndexedEdge { source: 0, target: 0, timestamp: 2.0 }],
        )
        .unwrap();
        assert_eq!(shuffle_timestamps(&one, 9).unwrap().edges(), one.edges());
    }
}
