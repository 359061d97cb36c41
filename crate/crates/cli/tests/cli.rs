use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tricluster(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tricluster"))
        .args(args)
        .current_dir(dir)
        .env_remove("TRICLUSTER_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = tricluster(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn shape(doc: &serde_json::Value) -> (usize, usize, usize) {
    let n = |k: &str| doc[k].as_array().unwrap().len();
    (n("source_clusters"), n("target_clusters"), n("segments"))
}

#[test]
fn patterned_pipeline_end_to_end() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    ok(&["gen", "--protocol", "patterned", "--out", "g.tsv"], p);
    let truth = fs::read_to_string(p.join("g.truth.tsv")).unwrap();
    let vertex_rows = truth.lines().filter(|l| l.starts_with('v') && l.as_bytes()[1].is_ascii_digit());
    assert_eq!(vertex_rows.count(), 40);
    assert_eq!(fs::read_to_string(p.join("g.tsv")).unwrap().lines().count(), 8192 + 1);

    ok(&["fit", "g.tsv", "--out", "m.json", "--threads", "2"], p);
    let doc = json(&p.join("m.json"));
    assert_eq!(shape(&doc), (4, 4, 4));
    assert_eq!(doc["format_version"], 1);
    let manifest = json(&p.join("m.manifest.json"));
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config"]["vns_restarts"], 10);
    assert_eq!(manifest["threads"], 2);
    assert!(manifest["outputs"].as_array().unwrap().len() == 2);

    ok(&["simplify", "m.json", "--informativity", "0.7", "--out", "s.json"], p);
    let trace = fs::read_to_string(p.join("s.trace.tsv")).unwrap();
    let mut rows = trace.lines();
    assert_eq!(rows.next().unwrap(), "step\tmerge_kind\toperand_a\toperand_b\tdelta_nats\ttotal_cost_nats\ttau");
    let taus: Vec<f64> = rows.map(|r| r.rsplit('\t').next().unwrap().parse().unwrap()).collect();
    assert!(taus.iter().all(|&t| t >= 0.7));
    let simplified = json(&p.join("s.json"));
    let (a, b, c) = shape(&simplified);
    assert_eq!(a + b + c + taus.len(), 12);

    ok(&["simplify", "m.json", "--informativity", "1", "--out", "same.json"], p);
    assert_eq!(json(&p.join("same.json"))["cells"], doc["cells"]);
    assert_eq!(fs::read_to_string(p.join("same.trace.tsv")).unwrap().lines().count(), 1);

    ok(&["analyze", "m.json", "--mode", "time", "--bits", "--out", "mi.tsv"], p);
    let mi = fs::read_to_string(p.join("mi.tsv")).unwrap();
    assert!(mi.starts_with("# total_mi\t"));
    assert!(mi.lines().nth(1).unwrap().ends_with("contribution_bits"));
    assert_eq!(mi.lines().count(), 2 + 4 * 4 * 4);

    ok(&["export", "m.json", "--out-dir", "tables"], p);
    for f in ["clusters.tsv", "segments.tsv", "cells.tsv"] {
        assert!(p.join("tables").join(f).exists());
    }
}

#[test]
fn fits_are_byte_identical_across_runs_and_threads() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    ok(&["gen", "--edges", "2048", "--seed", "3", "--out", "g.tsv"], p);
    ok(&["gen", "--edges", "2048", "--seed", "3", "--out", "h.tsv"], p);
    assert_eq!(fs::read(p.join("g.tsv")).unwrap(), fs::read(p.join("h.tsv")).unwrap());
    ok(&["fit", "g.tsv", "--out", "a.json", "--threads", "1"], p);
    ok(&["fit", "g.tsv", "--out", "b.json", "--threads", "3"], p);
    let out = Command::new(env!("CARGO_BIN_EXE_tricluster"))
        .args(["fit", "g.tsv", "--out", "c.json"])
        .current_dir(p)
        .env("TRICLUSTER_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&p.join("c.manifest.json"))["threads"], 2);
    let a = fs::read(p.join("a.json")).unwrap();
    assert_eq!(a, fs::read(p.join("b.json")).unwrap());
    assert_eq!(a, fs::read(p.join("c.json")).unwrap());
}

#[test]
fn random_protocol_fits_the_null_model() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    ok(&["gen", "--protocol", "random", "--edges", "2048", "--out", "r.tsv"], p);
    ok(&["fit", "r.tsv", "--out", "r.json"], p);
    assert_eq!(shape(&json(&p.join("r.json"))), (1, 1, 1));
    // No structure to coarsen.
    let out = tricluster(&["simplify", "r.json", "--informativity", "0.5", "--out", "rs.json"], p);
    assert!(!out.status.success());
    ok(&["analyze", "r.json", "--mode", "time", "--out", "mi.tsv"], p);
    let mi = fs::read_to_string(p.join("mi.tsv")).unwrap();
    assert!(mi.starts_with("# total_mi\t0\tnats"));
}

#[test]
fn single_edge_fits_the_null_model() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    fs::write(p.join("one.tsv"), "a\tb\t1.5\n").unwrap();
    ok(&["fit", "one.tsv", "--out", "one.json"], p);
    assert_eq!(shape(&json(&p.join("one.json"))), (1, 1, 1));
}

#[test]
fn rank_one_table_has_zero_contributions() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    let mut text = String::new();
    for (s, t, k) in [("a", "x", 2), ("a", "y", 4), ("b", "x", 3), ("b", "y", 6)] {
        for _ in 0..k {
            text += &format!("{s}\t{t}\t0\n");
        }
    }
    fs::write(p.join("e.tsv"), text).unwrap();
    ok(&["fit", "e.tsv", "--out", "m.json"], p);
    // Hand-written singleton model over the same edges.
    let mut doc = json(&p.join("m.json"));
    doc["source_clusters"] = serde_json::json!([["a"], ["b"]]);
    doc["target_clusters"] = serde_json::json!([["x"], ["y"]]);
    doc["cells"] = serde_json::json!([[0, 0, 0, 2], [0, 1, 0, 4], [1, 0, 0, 3], [1, 1, 0, 6]]);
    fs::write(p.join("r1.json"), doc.to_string()).unwrap();
    ok(&["analyze", "r1.json", "--mode", "pairs", "--out", "mi.tsv"], p);
    let mi = fs::read_to_string(p.join("mi.tsv")).unwrap();
    for row in mi.lines().skip(2) {
        assert_eq!(row.rsplit('\t').next().unwrap(), "0", "{row}");
    }
}

#[test]
fn analyze_matches_a_reference_on_a_small_tensor() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    // 3x3x2 toy tensor on singleton clusters, two segments at t=0 and t=1.
    let counts = [[[3, 0], [1, 1], [0, 2]], [[0, 4], [2, 0], [1, 1]], [[1, 0], [0, 0], [2, 5]]];
    let (mut text, mut cells) = (String::new(), Vec::new());
    for (i, row) in counts.iter().enumerate() {
        for (j, pair) in row.iter().enumerate() {
            for (n, &k) in pair.iter().enumerate() {
                for _ in 0..k {
                    text += &format!("s{i}\tt{j}\t{n}\n");
                }
                if k > 0 {
                    cells.push([i, j, n, k]);
                }
            }
        }
    }
    fs::write(p.join("e.tsv"), text).unwrap();
    ok(&["fit", "e.tsv", "--out", "m.json"], p);
    let mut doc = json(&p.join("m.json"));
    let names = |p: &str| (0..3).map(|i| vec![format!("{p}{i}")]).collect::<Vec<_>>();
    doc["source_clusters"] = serde_json::json!(names("s"));
    doc["target_clusters"] = serde_json::json!(names("t"));
    let first_t1 = counts.iter().flatten().map(|p| p[0]).sum::<usize>();
    let total = cells.iter().map(|c| c[3]).sum::<usize>();
    doc["segments"] = serde_json::json!([
        { "first_rank": 1, "last_rank": first_t1, "size": first_t1, "t_min": 0.0, "t_max": 0.0 },
        { "first_rank": first_t1 + 1, "last_rank": total, "size": total - first_t1, "t_min": 1.0, "t_max": 1.0 },
    ]);
    doc["cells"] = serde_json::json!(cells);
    fs::write(p.join("toy.json"), doc.to_string()).unwrap();
    ok(&["analyze", "toy.json", "--mode", "time", "--out", "mi.tsv"], p);
    let mi = fs::read_to_string(p.join("mi.tsv")).unwrap();
    let got: f64 = mi.lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();

    let e = total as f64;
    let seg: Vec<f64> = (0..2).map(|n| counts.iter().flatten().map(|p| p[n] as f64).sum()).collect();
    let mut want = 0.0;
    for row in &counts {
        for pair in row {
            let pair_total = (pair[0] + pair[1]) as f64;
            for n in 0..2 {
                let k = pair[n] as f64;
                if k > 0.0 {
                    want += k / e * (k * e / (pair_total * seg[n])).ln();
                }
            }
        }
    }
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn failures_exit_nonzero_without_partial_outputs() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    let out = tricluster(&["simplify", "missing.json", "--informativity", "0.5", "--out", "s.json"], p);
    assert!(!out.status.success());
    assert!(!p.join("s.json").exists() && !p.join("s.trace.tsv").exists());

    fs::write(p.join("bad.tsv"), "a\tb\t1\na\tb\n").unwrap();
    let out = tricluster(&["fit", "bad.tsv", "--out", "m.json"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!p.join("m.json").exists() && !p.join("m.manifest.json").exists());

    fs::write(p.join("empty.tsv"), "# nothing\n").unwrap();
    assert!(!tricluster(&["fit", "empty.tsv", "--out", "m.json"], p).status.success());

    ok(&["gen", "--edges", "600", "--out", "g.tsv"], p);
    ok(&["fit", "g.tsv", "--out", "m.json", "--vns-restarts", "2"], p);
    for tau in ["0", "1.5", "-0.2"] {
        let out = tricluster(&["simplify", "m.json", "--informativity", tau, "--out", "s.json"], p);
        assert!(!out.status.success());
    }
    fs::write(p.join("bad.cfg"), "vns_restarts = 3\nwhatever = 1\n").unwrap();
    let out = tricluster(&["fit", "g.tsv", "--config", "bad.cfg", "--out", "x.json"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(fs::read_dir(p).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".tmp")));
}

#[test]
fn config_file_and_flags_combine() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    ok(&["gen", "--edges", "600", "--out", "g.tsv"], p);
    fs::write(p.join("opt.cfg"), "# tuned\nvns_restarts = 3\nseed = 9\n").unwrap();
    ok(&["fit", "g.tsv", "--config", "opt.cfg", "--seed", "4", "--out", "m.json"], p);
    let m = json(&p.join("m.manifest.json"));
    assert_eq!(m["config"]["vns_restarts"], 3);
    assert_eq!(m["seed"], 4);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}
