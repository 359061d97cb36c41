//! Mutual-information diagnostics over a fitted model.
//!
//! `mutual_info_clusters` reads the (source cluster, target cluster) table
//! with time marginalized out; `mutual_info_time` measures how far each
//! tri-cluster departs from the product of its pair frequency and its
//! segment frequency. Every grid cell is reported, zero counts included.
//!
//! Independence is decided on integers: a cell whose count satisfies
//! `n·|E| == a·b` exactly contributes exactly 0, so product-form tables give
//! a total of exactly 0 rather than rounding noise.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::model::ImageGraphModel;
use crate::scalar::{CompensatedSum, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MiMode {
    Pairs,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MiUnit {
    Nats,
    Bits,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MiContribution<T> {
    pub source_cluster: usize,
    pub target_cluster: usize,
    pub segment: Option<usize>,
    pub joint_p: T,
    pub expected_p: T,
    pub contribution: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiReport<T> {
    pub mode: MiMode,
    pub unit: MiUnit,
    pub total_mi: T,
    /// Row-major over (source, target[, segment]).
    pub contributions: Vec<MiContribution<T>>,
    pub source_marginal: Vec<T>,
    pub target_marginal: Vec<T>,
    /// Only for the time analysis.
    pub segment_marginal: Vec<T>,
    /// p(c_S, c_T), row-major.
    pub pair_marginal: Vec<T>,
}

/// `p · ln(p / q)` with `p = joint/total` and `q = expected/total²`, with
/// exact zeros for empty cells and for cells at independence.
fn contribution<T: Real>(joint: u64, total: u64, expected: u128) -> T {
    if joint == 0 {
        return T::zero();
    }
    let observed = u128::from(joint) * u128::from(total);
    if observed == expected {
        return T::zero();
    }
    let p = T::from_count(joint) / T::from_count(total);
    p * T::lit(observed as f64 / expected as f64).ln()
}

fn ratio<T: Real>(num: u128, den: u128) -> T {
    T::lit(num as f64 / den as f64)
}

struct Tables {
    ks: usize,
    kt: usize,
    ns: usize,
    total: u64,
    cube: Vec<u64>,
    pair: Vec<u64>,
    src: Vec<u64>,
    tgt: Vec<u64>,
    seg: Vec<u64>,
}

impl Tables {
    fn of(model: &ImageGraphModel) -> Self {
        let (ks, kt, ns) = (model.num_source_clusters(), model.num_target_clusters(), model.num_segments());
        let mut t = Tables {
            ks,
            kt,
            ns,
            total: model.num_edges(),
            cube: vec![0; ks * kt * ns],
            pair: vec![0; ks * kt],
            src: vec![0; ks],
            tgt: vec![0; kt],
            seg: vec![0; ns],
        };
        for c in model.dense_cells() {
            let (i, j, n) = (c.source as usize, c.target as usize, c.segment as usize);
            t.cube[(i * kt + j) * ns + n] += c.count;
            t.pair[i * kt + j] += c.count;
            t.src[i] += c.count;
            t.tgt[j] += c.count;
            t.seg[n] += c.count;
        }
        t
    }

    fn marginal<T: Real>(&self, counts: &[u64]) -> Vec<T> {
        counts.iter().map(|&c| T::from_count(c) / T::from_count(self.total)).collect()
    }
}

fn finish<T: Real>(mode: MiMode, tables: &Tables, contributions: Vec<MiContribution<T>>) -> MiReport<T> {
    let total = contributions.iter().map(|c| c.contribution).collect::<CompensatedSum<T>>().value();
    MiReport {
        mode,
        unit: MiUnit::Nats,
        total_mi: total.max(T::zero()),
        contributions,
        source_marginal: tables.marginal(&tables.src),
        target_marginal: tables.marginal(&tables.tgt),
        segment_marginal: if mode == MiMode::Time { tables.marginal(&tables.seg) } else { Vec::new() },
        pair_marginal: tables.marginal(&tables.pair),
    }
}

/// `MI(C_S, C_T)` over the time-aggregated cluster table.
pub fn mutual_info_clusters<T: Real>(model: &ImageGraphModel) -> MiReport<T> {
    let t = Tables::of(model);
    let e = u128::from(t.total);
    let mut out = Vec::with_capacity(t.ks * t.kt);
    for i in 0..t.ks {
        for j in 0..t.kt {
            let joint = t.pair[i * t.kt + j];
            let num = u128::from(t.src[i]) * u128::from(t.tgt[j]);
            out.push(MiContribution {
                source_cluster: i,
                target_cluster: j,
                segment: None,
                joint_p: T::from_count(joint) / T::from_count(t.total),
                expected_p: ratio(num, e * e),
                contribution: contribution(joint, t.total, num),
            });
        }
    }
    finish(MiMode::Pairs, &t, out)
}

/// `MI[(C_S, C_T), I]`: tri-cluster frequency against pair × segment marginals.
pub fn mutual_info_time<T: Real>(model: &ImageGraphModel) -> MiReport<T> {
    let t = Tables::of(model);
    let e = u128::from(t.total);
    let mut out = Vec::with_capacity(t.ks * t.kt * t.ns);
    for i in 0..t.ks {
        for j in 0..t.kt {
            for n in 0..t.ns {
                let joint = t.cube[(i * t.kt + j) * t.ns + n];
                let num = u128::from(t.pair[i * t.kt + j]) * u128::from(t.seg[n]);
                out.push(MiContribution {
                    source_cluster: i,
                    target_cluster: j,
                    segment: Some(n),
                    joint_p: T::from_count(joint) / T::from_count(t.total),
                    expected_p: ratio(num, e * e),
                    contribution: contribution(joint, t.total, num),
                });
            }
        }
    }
    finish(MiMode::Time, &t, out)
}

impl<T: Real> MiReport<T> {
    pub fn contribution_sum(&self) -> T {
        self.contributions.iter().map(|c| c.contribution).collect::<CompensatedSum<T>>().value()
    }

    /// The same report with information quantities in bits.
    pub fn to_bits(&self) -> Self {
        if self.unit == MiUnit::Bits {
            return self.clone();
        }
        let ln2 = T::LN_2();
        let mut out = self.clone();
        out.unit = MiUnit::Bits;
        out.total_mi = self.total_mi / ln2;
        for c in &mut out.contributions {
            c.contribution = c.contribution / ln2;
        }
        out
    }

    /// A `# total_mi` header line, then one tab-separated row per grid cell.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let unit = match self.unit {
            MiUnit::Nats => "nats",
            MiUnit::Bits => "bits",
        };
        writeln!(out, "# total_mi\t{}\t{}", self.total_mi, unit)?;
        match self.mode {
            MiMode::Pairs => writeln!(out, "source_cluster\ttarget_cluster\tjoint_p\texpected_p\tcontribution_{unit}")?,
            MiMode::Time => {
                writeln!(out, "source_cluster\ttarget_cluster\tsegment\tjoint_p\texpected_p\tcontribution_{unit}")?
            }
        }
        for c in &self.contributions {
            match c.segment {
                None => writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    c.source_cluster, c.target_cluster, c.joint_p, c.expected_p, c.contribution
                )?,
                Some(n) => writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    c.source_cluster, c.target_cluster, n, c.joint_p, c.expected_p, c.contribution
                )?,
            }
        }
        Ok(())
    }
}
