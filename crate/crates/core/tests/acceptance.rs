//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. `ACCEPTANCE_ONLY=3,4` runs a subset.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tricluster::analytics::{mutual_info_clusters, mutual_info_time};
use tricluster::simplifier::{coarsening_trace, informativity, js_diagnostic};
use tricluster::{
    generate_patterned, rewire_all, shuffle_timestamps, vns_optimize, ClusterId, Criterion, ImageGraphModel,
    IndexedEdge, Merge, ModelBasis, OptimizerConfig, Partition, PatternSpec, ScoredModel, Side, TemporalGraph,
};

use common::*;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fit(g: &TemporalGraph, seed: u64) -> ScoredModel {
    vns_optimize::<f64>(g, &OptimizerConfig { seed, ..OptimizerConfig::default() }).unwrap()
}

fn shape(m: &ImageGraphModel) -> (usize, usize, usize) {
    (m.num_source_clusters(), m.num_target_clusters(), m.num_segments())
}

fn pattern(edges: usize, seed: u64) -> TemporalGraph {
    generate_patterned(&PatternSpec { num_edges: edges, seed, ..PatternSpec::default() }).unwrap().0
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn oracle_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 60;
    let (mut attained, mut below) = (0, 0);
    for _ in 0..n {
        let g = random_small_graph(&mut rng);
        let best = exhaustive_minimum(&g).cost;
        let got = fit(&g, 1).total();
        let tol = 1e-9 * best.abs().max(1.0);
        if got < best - tol {
            below += 1;
        } else if got <= best + tol {
            attained += 1;
        }
    }
    let rate = attained as f64 / n as f64;
    outcome(rate >= 0.95 && below == 0, format!("{attained}/{n} optimal, {below} below the enumerated minimum"))
}

fn criterion_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst, mut checked) = (0.0f64, 0);
    while checked < 1000 {
        let ns = rng.gen_range(1..=8u32);
        let nt = rng.gen_range(1..=8u32);
        let edges: Vec<(u32, u32, f64)> = (0..rng.gen_range(1..=60))
            .map(|_| (rng.gen_range(0..ns), rng.gen_range(0..nt), f64::from(rng.gen_range(0..15u32))))
            .collect();
        let g = graph_from(ns, nt, &edges);
        let mut labels = |n: u32| {
            let k = rng.gen_range(1..=n);
            let mut a: Vec<u32> = (0..n).map(|v| if v < k { v } else { rng.gen_range(0..k) }).collect();
            use rand::seq::SliceRandom;
            a.shuffle(&mut rng);
            Partition::new(a).unwrap()
        };
        let (sp, tp) = (labels(ns), labels(nt));
        let runs = run_starts(&g);
        let mut starts = vec![0u64];
        starts.extend(runs[1..].iter().filter(|_| rng.gen_bool(0.5)).map(|&r| r as u64));
        let m = ImageGraphModel::from_parts(&g, &sp, &tp, &starts).unwrap();
        let crit = Criterion::new(Arc::new(ModelBasis::from_graph(&g)));
        let proposals = crit.proposals(&m);
        if proposals.is_empty() {
            continue;
        }
        let p = &proposals[rng.gen_range(0..proposals.len())];
        let full = crit.cost(&m.apply_merge(p.merge).unwrap()).unwrap().total - crit.cost(&m).unwrap().total;
        worst = worst.max((p.delta - full).abs() / full.abs().max(1.0));
        checked += 1;
    }
    outcome(worst <= 1e-9, format!("{checked} merges, worst relative error {worst:.2e}"))
}

fn pattern_recovery() -> Outcome {
    let seeds = 1..=100u64;
    let big: Vec<_> = seeds.clone().map(|s| shape(&fit(&pattern(8192, s), s).model)).collect();
    let small: Vec<_> = seeds.map(|s| shape(&fit(&pattern(256, s), s).model)).collect();
    let ks = mean(&big.iter().map(|x| x.0 as f64).collect::<Vec<_>>());
    let kt = mean(&big.iter().map(|x| x.1 as f64).collect::<Vec<_>>());
    let n = mean(&big.iter().map(|x| x.2 as f64).collect::<Vec<_>>());
    let ks_small = mean(&small.iter().map(|x| x.0 as f64).collect::<Vec<_>>());
    let ok = (3.5..=4.5).contains(&ks) && (3.5..=4.5).contains(&n) && ks_small <= 1.5;
    outcome(
        ok,
        format!("8192 edges: mean K_S {ks:.2}, K_T {kt:.2}, N {n:.2}; 256 edges: mean K_S {ks_small:.2}"),
    )
}

fn stationarity() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for edges in [512, 1024, 2048, 4096, 8192] {
        let single = (1..=100u64)
            .filter(|&s| fit(&shuffle_timestamps(&pattern(edges, s), s).unwrap(), s).model.num_segments() == 1)
            .count();
        ok &= single >= 95;
        parts.push(format!("{edges}: {single}/100"));
    }
    outcome(ok, format!("N = 1 at {}", parts.join(", ")))
}

fn null_behavior() -> Outcome {
    let null = (1..=100u64)
        .filter(|&s| shape(&fit(&rewire_all(&pattern(8192, s), s).unwrap(), s).model) == (1, 1, 1))
        .count();
    outcome(null == 100, format!("{null}/100 rewired graphs fit the null model"))
}

/// Two source clusters with different target profiles, one time segment.
fn twin_clusters(edges: usize, seed: u64) -> ImageGraphModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = 5u32;
    let list: Vec<IndexedEdge> = (0..edges)
        .map(|_| {
            let a = rng.gen_bool(0.5);
            let to_first = rng.gen_bool(if a { 0.7 } else { 0.4 });
            IndexedEdge {
                source: rng.gen_range(0..per) + if a { 0 } else { per },
                target: rng.gen_range(0..per) + if to_first { 0 } else { per },
                timestamp: 0.0,
            }
        })
        .collect();
    let names = |p: &str| (0..2 * per).map(|i| format!("{p}{i}")).collect();
    let g = TemporalGraph::from_indexed(names("s"), names("t"), list).unwrap();
    let halves = Partition::new((0..2 * per).map(|v| v / per).collect()).unwrap();
    ImageGraphModel::from_parts(&g, &halves, &halves, &[0]).unwrap()
}

fn js_asymptotics() -> Outcome {
    let mut gaps = Vec::new();
    for k in 12..=16 {
        let per_seed: Vec<f64> = (1..=8u64)
            .map(|s| {
                let m = twin_clusters(1 << k, s);
                let crit = Criterion::for_model(&m);
                js_diagnostic(&crit, &m, Merge::clusters(Side::Source, ClusterId(0), ClusterId(1)))
                    .unwrap()
                    .relative_gap()
            })
            .collect();
        gaps.push(mean(&per_seed));
    }
    let ok = gaps.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    outcome(ok, format!("mean relative gap over 2^12..2^16: {}", shown.join(" > ")))
}

fn informativity_trace(fits: &[(TemporalGraph, ScoredModel)]) -> Outcome {
    let (mut endpoints, mut monotone, mut traces) = (0, 0, 0);
    let mut first_drop = None;
    for (g, f) in fits {
        let crit = Criterion::new(Arc::new(ModelBasis::from_graph(g)));
        let Ok(trace) = coarsening_trace(&crit, &f.model) else { continue };
        traces += 1;
        let top = informativity(trace.origin_cost, trace.origin_cost, trace.null_cost).unwrap();
        let last = trace.steps.last().unwrap();
        if top == 1.0 && last.tau == 0.0 && last.total_cost == trace.null_cost {
            endpoints += 1;
        }
        let mut prev = (trace.origin_cost, 1.0);
        let mut ok = true;
        for (i, s) in trace.steps.iter().enumerate() {
            if s.total_cost < prev.0 || s.tau > prev.1 {
                ok = false;
                first_drop.get_or_insert((i + 1, trace.len(), s.proposal.kind().as_str(), s.proposal.delta));
            }
            prev = (s.total_cost, s.tau);
        }
        monotone += usize::from(ok);
    }
    let mut detail = format!("endpoints exact in {endpoints}/{traces} traces, monotone in {monotone}/{traces}");
    if let Some((step, len, kind, delta)) = first_drop {
        detail += &format!("; first decrease at step {step}/{len} ({kind} merge, delta {delta:.3})");
    }
    outcome(traces > 0 && endpoints == traces && monotone == traces, detail)
}

fn mi_properties(fits: &[(TemporalGraph, ScoredModel)]) -> Outcome {
    let mut failures = Vec::new();
    for (_, f) in fits {
        for r in [mutual_info_clusters::<f64>(&f.model), mutual_info_time::<f64>(&f.model)] {
            if r.total_mi < 0.0 || (r.total_mi - r.contribution_sum()).abs() > 1e-9 {
                failures.push("fitted total or sum");
            }
        }
        if f.model.num_segments() == 1 && mutual_info_time::<f64>(&f.model).total_mi != 0.0 {
            failures.push("N = 1 time analysis");
        }
    }
    let table = |cells: &[(u32, u32, usize)]| {
        let edges: Vec<(u32, u32, f64)> =
            cells.iter().flat_map(|&(s, t, k)| std::iter::repeat_n((s, t, 0.0), k)).collect();
        let g = graph_from(2, 2, &edges);
        ImageGraphModel::from_parts(&g, &Partition::singletons(2), &Partition::singletons(2), &[0]).unwrap()
    };
    if mutual_info_clusters::<f64>(&table(&[(0, 0, 2), (0, 1, 4), (1, 0, 3), (1, 1, 6)])).total_mi != 0.0 {
        failures.push("rank-one table");
    }
    let diag = mutual_info_clusters::<f64>(&table(&[(0, 0, 5), (1, 1, 5)])).total_mi;
    if (diag - std::f64::consts::LN_2).abs() > 1e-12 {
        failures.push("2x2 diagonal");
    }
    let detail = if failures.is_empty() {
        format!("{} fitted models, rank-one 0, diagonal {diag:.15}", fits.len())
    } else {
        failures.dedup();
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn scaling() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let config = OptimizerConfig::default();
    let mut rows = Vec::new();
    for k in [12u32, 13, 14, 15] {
        let g = pattern(1 << k, 1);
        let (mut mem, mut secs) = (0usize, f64::INFINITY);
        for _ in 0..3 {
            let base = CURRENT.load(Ordering::Relaxed);
            PEAK.store(base, Ordering::Relaxed);
            let t = Instant::now();
            let f = pool.install(|| vns_optimize::<f64>(&g, &config).unwrap());
            secs = secs.min(t.elapsed().as_secs_f64());
            mem = mem.max(PEAK.load(Ordering::Relaxed).saturating_sub(base));
            drop(f);
        }
        rows.push((k, mem as f64, secs));
    }
    let (first, last) = (rows[0], rows[3]);
    let growth = f64::from(1u32 << (last.0 - first.0));
    let mem_ratio = last.1 / first.1 / growth;
    let work = |k: u32| {
        let e = f64::from(1u32 << k);
        e * e.sqrt() * e.ln()
    };
    let time_ratio = (last.2 / first.2) / (work(last.0) / work(first.0));
    let shown: Vec<String> =
        rows.iter().map(|(k, m, s)| format!("2^{k}: {:.1} MiB {:.2}s", m / 1048576.0, s)).collect();
    outcome(
        mem_ratio <= 1.3 && time_ratio <= 2.0,
        format!("{}; memory vs linear {mem_ratio:.2}, time vs E^1.5 log E {time_ratio:.2}", shown.join(", ")),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));

    let mut fits: Vec<(TemporalGraph, ScoredModel)> = Vec::new();
    if wanted(7) || wanted(8) {
        for s in 1..=20u64 {
            let g = pattern(2048, s);
            let f = fit(&g, s);
            fits.push((g, f));
        }
        for s in 1..=10u64 {
            let g = shuffle_timestamps(&pattern(2048, s), s).unwrap();
            let f = fit(&g, s);
            fits.push((g, f));
        }
    }

    let criteria: Vec<(usize, &str, Check)> = vec![
        (1, "oracle optimality", Box::new(oracle_optimality)),
        (2, "criterion exactness", Box::new(criterion_exactness)),
        (3, "pattern recovery", Box::new(pattern_recovery)),
        (4, "stationarity", Box::new(stationarity)),
        (5, "null behavior", Box::new(null_behavior)),
        (6, "JS asymptotics", Box::new(js_asymptotics)),
        (7, "informativity endpoints and monotonicity", Box::new(|| informativity_trace(&fits))),
        (8, "MI properties", Box::new(|| mi_properties(&fits))),
        (9, "scaling", Box::new(scaling)),
    ];
    let mut failed = 0;
    for (i, name, run) in &criteria {
        if !wanted(*i) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {i} {name}: {} ({}) [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
