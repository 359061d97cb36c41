//! Timestamped directed multigraphs and their rank discretization.
//!
//! Vertex identifiers are interned to dense `u32` ids. Edges keep their
//! input order; the time axis is represented only through ranks, so any
//! strictly monotone transformation of the timestamps yields the same graph
//! as far as the rest of the crate is concerned.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One observed edge, as read from input.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEdge {
    pub source: String,
    pub target: String,
    pub timestamp: f64,
}

impl TemporalEdge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, timestamp: f64) -> Self {
        Self { source: source.into(), target: target.into(), timestamp }
    }
}

/// An interned edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexedEdge {
    pub source: u32,
    pub target: u32,
    pub timestamp: f64,
}

#[derive(Clone, Debug, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn from_names(names: Vec<String>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i as u32).is_some() {
                return Err(name.clone());
            }
        }
        Ok(Self { names, index })
    }

    fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

/// Immutable timestamped directed multigraph.
///
/// Ranks order edges by `(timestamp, source id, target id, input position)`.
/// Edges with identical timestamps form a *run*; segment boundaries may only
/// fall on run starts.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    sources: Interner,
    targets: Interner,
    edges: Vec<IndexedEdge>,
    /// 1-based rank of each edge, in input order.
    ranks: Vec<u32>,
    /// Edge index at each rank position (0-based).
    by_rank: Vec<u32>,
    /// 0-based rank positions at which a run of equal timestamps starts.
    run_starts: Vec<u32>,
    source_degrees: Vec<u64>,
    target_degrees: Vec<u64>,
}

impl TemporalGraph {
    /// Builds a graph from named edges.
    ///
    /// When a vertex set is `None` it is inferred from the edges in order of
    /// first appearance. When it is given, every endpoint must belong to it;
    /// declared vertices without edges are kept with degree zero.
    pub fn build(
        edges: &[TemporalEdge],
        source_set: Option<Vec<String>>,
        target_set: Option<Vec<String>>,
    ) -> Result<Self> {
        let declared_sources = source_set.is_some();
        let declared_targets = target_set.is_some();
        let mut sources = Interner::from_names(source_set.unwrap_or_default()).map_err(|name| {
            Error::Ingestion {
                index: 0,
                source_id: name,
                target_id: String::new(),
                reason: "duplicate source vertex in declared set".into(),
            }
        })?;
        let mut targets = Interner::from_names(target_set.unwrap_or_default()).map_err(|name| {
            Error::Ingestion {
                index: 0,
                source_id: String::new(),
                target_id: name,
                reason: "duplicate target vertex in declared set".into(),
            }
        })?;

        let mut indexed = Vec::with_capacity(edges.len());
        for (index, e) in edges.iter().enumerate() {
            let fail = |reason: &str| Error::Ingestion {
                index,
                source_id: e.source.clone(),
                target_id: e.target.clone(),
                reason: reason.to_owned(),
            };
            if !e.timestamp.is_finite() {
                return Err(fail("timestamp is not finite"));
            }
            let source = if declared_sources {
                *sources.index.get(&e.source).ok_or_else(|| fail("source not in the declared source set"))?
            } else {
                sources.get_or_insert(&e.source)
            };
            let target = if declared_targets {
                *targets.index.get(&e.target).ok_or_else(|| fail("target not in the declared target set"))?
            } else {
                targets.get_or_insert(&e.target)
            };
            indexed.push(IndexedEdge { source, target, timestamp: e.timestamp });
        }
        Self::assemble(sources, targets, indexed)
    }

    /// Builds a graph from already interned edges.
    pub fn from_indexed(
        source_names: Vec<String>,
        target_names: Vec<String>,
        edges: Vec<IndexedEdge>,
    ) -> Result<Self> {
        let sources = Interner::from_names(source_names).map_err(|name| Error::Ingestion {
            index: 0,
            source_id: name,
            target_id: String::new(),
            reason: "duplicate source vertex".into(),
        })?;
        let targets = Interner::from_names(target_names).map_err(|name| Error::Ingestion {
            index: 0,
            source_id: String::new(),
            target_id: name,
            reason: "duplicate target vertex".into(),
        })?;
        for (index, e) in edges.iter().enumerate() {
            let reason = if !e.timestamp.is_finite() {
                Some("timestamp is not finite")
            } else if e.source as usize >= sources.names.len() {
                Some("source id out of range")
            } else if e.target as usize >= targets.names.len() {
                Some("target id out of range")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::Ingestion {
                    index,
                    source_id: e.source.to_string(),
                    target_id: e.target.to_string(),
                    reason: reason.into(),
                });
            }
        }
        Self::assemble(sources, targets, edges)
    }

    fn assemble(sources: Interner, targets: Interner, edges: Vec<IndexedEdge>) -> Result<Self> {
        let mut by_rank: Vec<u32> = (0..edges.len() as u32).collect();
        by_rank.sort_by(|&a, &b| {
            let (ea, eb) = (&edges[a as usize], &edges[b as usize]);
            ea.timestamp
                .total_cmp(&eb.timestamp)
                .then(ea.source.cmp(&eb.source))
                .then(ea.target.cmp(&eb.target))
                .then(a.cmp(&b))
        });
        let mut ranks = vec![0u32; edges.len()];
        let mut run_starts = Vec::new();
        for (pos, &e) in by_rank.iter().enumerate() {
            ranks[e as usize] = pos as u32 + 1;
            // -0.0 and 0.0 compare equal here, which is what a tie means.
            if pos == 0 || edges[by_rank[pos - 1] as usize].timestamp != edges[e as usize].timestamp {
                run_starts.push(pos as u32);
            }
        }
        let mut source_degrees = vec![0u64; sources.names.len()];
        let mut target_degrees = vec![0u64; targets.names.len()];
        for e in &edges {
            source_degrees[e.source as usize] += 1;
            target_degrees[e.target as usize] += 1;
        }
        Ok(Self { sources, targets, edges, ranks, by_rank, run_starts, source_degrees, target_degrees })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.names.len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.names.len()
    }

    pub fn source_names(&self) -> &[String] {
        &self.sources.names
    }

    pub fn target_names(&self) -> &[String] {
        &self.targets.names
    }

    pub fn source_id(&self, name: &str) -> Option<u32> {
        self.sources.index.get(name).copied()
    }

    pub fn target_id(&self, name: &str) -> Option<u32> {
        self.targets.index.get(name).copied()
    }

    /// Edges in input order.
    pub fn edges(&self) -> &[IndexedEdge] {
        &self.edges
    }

    /// 1-based ranks, parallel to [`edges`](Self::edges).
    pub fn edge_ranks(&self) -> &[u32] {
        &self.ranks
    }

    /// Edge indices sorted by rank.
    pub fn edges_by_rank(&self) -> &[u32] {
        &self.by_rank
    }

    /// The edge holding 0-based rank position `pos`.
    pub fn edge_at_rank(&self, pos: usize) -> &IndexedEdge {
        &self.edges[self.by_rank[pos] as usize]
    }

    /// 0-based rank positions where a maximal run of equal timestamps starts.
    pub fn run_starts(&self) -> &[u32] {
        &self.run_starts
    }

    pub fn num_distinct_timestamps(&self) -> usize {
        self.run_starts.len()
    }

    pub fn source_degrees(&self) -> &[u64] {
        &self.source_degrees
    }

    pub fn target_degrees(&self) -> &[u64] {
        &self.target_degrees
    }

    /// True when `pos` (0-based) starts a run, i.e. a boundary may be placed there.
    pub fn is_run_start(&self, pos: usize) -> bool {
        self.run_starts.binary_search(&(pos as u32)).is_ok()
    }

    /// Returns the named edge list, in input order.
    pub fn to_edges(&self) -> Vec<TemporalEdge> {
        self.edges
            .iter()
            .map(|e| TemporalEdge {
                source: self.sources.names[e.source as usize].clone(),
                target: self.targets.names[e.target as usize].clone(),
                timestamp: e.timestamp,
            })
            .collect()
    }
}

/// Reads `source<TAB>target<TAB>timestamp` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Vec<TemporalEdge>> {
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp {:?} is not a decimal number", fields[2]),
        })?;
        if !timestamp.is_finite() {
            return Err(Error::Parse { line: line_no, message: "timestamp is not finite".into() });
        }
        edges.push(TemporalEdge::new(fields[0], fields[1], timestamp));
    }
    Ok(edges)
}

pub fn write_edge_list<W: Write>(mut out: W, graph: &TemporalGraph) -> Result<()> {
    writeln!(out, "# source\ttarget\ttimestamp")?;
    for e in graph.edges() {
        writeln!(
            out,
            "{}\t{}\t{}",
            graph.source_names()[e.source as usize],
            graph.target_names()[e.target as usize],
            e.timestamp
        )?;
    }
    Ok(())
}
