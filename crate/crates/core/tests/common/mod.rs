//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the crate's criterion or model code.
#![allow(dead_code)]

use rand::Rng;
use statrs::function::factorial::ln_factorial;
use tricluster::{IndexedEdge, TemporalGraph};

pub fn lnf(n: u64) -> f64 {
    ln_factorial(n)
}

pub fn ln_binom(n: u64, k: u64) -> f64 {
    lnf(n) - lnf(k) - lnf(n - k)
}

/// Σ_{j=1..k} S(n, j), exactly.
pub fn bell_prefix(n: usize, k: usize) -> u128 {
    let mut s = vec![vec![0u128; n + 1]; n + 1];
    s[0][0] = 1;
    for i in 1..=n {
        for j in 1..=i {
            s[i][j] = j as u128 * s[i - 1][j] + s[i - 1][j - 1];
        }
    }
    (1..=k).map(|j| s[n][j]).sum()
}

/// Edges in rank order: (timestamp, source, target, input position).
pub fn rank_order(g: &TemporalGraph) -> Vec<IndexedEdge> {
    let mut idx: Vec<usize> = (0..g.num_edges()).collect();
    let e = g.edges();
    idx.sort_by(|&a, &b| {
        e[a].timestamp
            .partial_cmp(&e[b].timestamp)
            .unwrap()
            .then(e[a].source.cmp(&e[b].source))
            .then(e[a].target.cmp(&e[b].target))
            .then(a.cmp(&b))
    });
    idx.into_iter().map(|i| e[i]).collect()
}

/// Positions (0-based, in rank order) where a new timestamp begins.
pub fn run_starts(g: &TemporalGraph) -> Vec<usize> {
    let r = rank_order(g);
    (0..r.len()).filter(|&p| p == 0 || r[p].timestamp != r[p - 1].timestamp).collect()
}

/// The seven-term cost written directly from the formulas.
pub fn oracle_cost(g: &TemporalGraph, src: &[u32], tgt: &[u32], starts: &[usize]) -> f64 {
    let m = g.num_edges() as u64;
    let (ns, nt) = (g.num_sources(), g.num_targets());
    let ks = *src.iter().max().unwrap() as usize + 1;
    let kt = *tgt.iter().max().unwrap() as usize + 1;
    let n = starts.len();
    let ranked = rank_order(g);

    let mut dv_s = vec![0u64; ns];
    let mut dv_t = vec![0u64; nt];
    for e in g.edges() {
        dv_s[e.source as usize] += 1;
        dv_t[e.target as usize] += 1;
    }
    let mut dc_s = vec![0u64; ks];
    let mut size_s = vec![0u64; ks];
    for v in 0..ns {
        dc_s[src[v] as usize] += dv_s[v];
        size_s[src[v] as usize] += 1;
    }
    let mut dc_t = vec![0u64; kt];
    let mut size_t = vec![0u64; kt];
    for v in 0..nt {
        dc_t[tgt[v] as usize] += dv_t[v];
        size_t[tgt[v] as usize] += 1;
    }
    let mut cells = vec![0u64; ks * kt * n];
    let mut seg_size = vec![0u64; n];
    let mut seg = 0;
    for (pos, e) in ranked.iter().enumerate() {
        while seg + 1 < n && pos >= starts[seg + 1] {
            seg += 1;
        }
        cells[(src[e.source as usize] as usize * kt + tgt[e.target as usize] as usize) * n + seg] += 1;
        seg_size[seg] += 1;
    }

    let k = (ks * kt * n) as u64;
    let prior_counts = (ns as f64).ln() + (nt as f64).ln() + (m as f64).ln();
    let prior_partitions = (bell_prefix(ns, ks) as f64).ln() + (bell_prefix(nt, kt) as f64).ln();
    let prior_cells = ln_binom(m + k - 1, k - 1);
    let mut prior_degrees = 0.0;
    for c in 0..ks {
        prior_degrees += ln_binom(dc_s[c] + size_s[c] - 1, size_s[c] - 1);
    }
    for c in 0..kt {
        prior_degrees += ln_binom(dc_t[c] + size_t[c] - 1, size_t[c] - 1);
    }
    let lik_cells = lnf(m) - cells.iter().map(|&x| lnf(x)).sum::<f64>();
    let lik_degrees = dc_s.iter().chain(&dc_t).map(|&d| lnf(d)).sum::<f64>()
        - dv_s.iter().chain(&dv_t).map(|&d| lnf(d)).sum::<f64>();
    let lik_time = seg_size.iter().map(|&s| lnf(s)).sum::<f64>();
    prior_counts + prior_partitions + prior_cells + prior_degrees + lik_cells + lik_degrees + lik_time
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, n: usize, max: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=max + 1 {
            prefix.push(c);
            rec(prefix, n, max.max(c), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut prefix = vec![0];
    rec(&mut prefix, n, 0, &mut out);
    out
}

/// Every contiguous segmentation whose boundaries sit on run starts.
pub fn segmentations(runs: &[usize]) -> Vec<Vec<usize>> {
    let inner = &runs[1..];
    (0..1u32 << inner.len())
        .map(|mask| {
            let mut s = vec![0];
            s.extend(inner.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &r)| r));
            s
        })
        .collect()
}

pub struct Optimum {
    pub cost: f64,
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub starts: Vec<usize>,
}

/// Global minimum over all (source partition, target partition, segmentation).
pub fn exhaustive_minimum(g: &TemporalGraph) -> Optimum {
    let sp = set_partitions(g.num_sources());
    let tp = set_partitions(g.num_targets());
    let segs = segmentations(&run_starts(g));
    let mut best = Optimum { cost: f64::INFINITY, src: vec![], tgt: vec![], starts: vec![] };
    for s in &sp {
        for t in &tp {
            for seg in &segs {
                let c = oracle_cost(g, s, t, seg);
                if c < best.cost {
                    best = Optimum { cost: c, src: s.clone(), tgt: t.clone(), starts: seg.clone() };
                }
            }
        }
    }
    best
}

/// Up to 5 sources, 5 targets and 8 edges, with timestamps drawn from a
/// small range so that ties occur.
pub fn random_small_graph<R: Rng>(rng: &mut R) -> TemporalGraph {
    let ns = rng.gen_range(1..=5u32);
    let nt = rng.gen_range(1..=5u32);
    let m = rng.gen_range(1..=8usize);
    let edges = (0..m)
        .map(|_| IndexedEdge {
            source: rng.gen_range(0..ns),
            target: rng.gen_range(0..nt),
            timestamp: f64::from(rng.gen_range(0..6u32)),
        })
        .collect();
    TemporalGraph::from_indexed(
        (0..ns).map(|i| format!("s{i}")).collect(),
        (0..nt).map(|i| format!("t{i}")).collect(),
        edges,
    )
    .unwrap()
}

pub fn graph_from(ns: u32, nt: u32, edges: &[(u32, u32, f64)]) -> TemporalGraph {
    TemporalGraph::from_indexed(
        (0..ns).map(|i| format!("s{i}")).collect(),
        (0..nt).map(|i| format!("t{i}")).collect(),
        edges.iter().map(|&(source, target, timestamp)| IndexedEdge { source, target, timestamp }).collect(),
    )
    .unwrap()
}
