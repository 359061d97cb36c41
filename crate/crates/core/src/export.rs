//! The model document: a JSON rendering of a fitted model that can be read
//! back without the original edge list.
//!
//! Floats go through serde_json's shortest round-trip formatting, so a
//! parsed value is bit-identical to the one written and the re-imported
//! model recomputes exactly the stored criterion total.

use std::io::{Read, Write};
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::criterion::{Criterion, CriterionBreakdown};
use crate::error::{Error, Result};
use crate::model::{Cell, ImageGraphModel, ModelBasis, Partition, SegmentBounds, Side};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexEntry {
    pub name: String,
    pub degree: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub num_edges: u64,
    pub source_vertices: Vec<VertexEntry>,
    pub target_vertices: Vec<VertexEntry>,
    /// Vertex names per dense cluster index.
    pub source_clusters: Vec<Vec<String>>,
    pub target_clusters: Vec<Vec<String>>,
    pub segments: Vec<SegmentBounds>,
    /// Nonzero cells as `[source cluster, target cluster, segment, count]`.
    pub cells: Vec<[u64; 4]>,
    pub criterion: CriterionBreakdown<f64>,
}

fn vertices(basis: &ModelBasis, side: Side) -> Vec<VertexEntry> {
    basis
        .names(side)
        .iter()
        .zip(basis.degrees(side))
        .map(|(name, &degree)| VertexEntry { name: name.clone(), degree })
        .collect()
}

fn clusters(model: &ImageGraphModel, side: Side) -> Vec<Vec<String>> {
    let names = model.basis().names(side);
    model
        .partition(side)
        .members()
        .into_iter()
        .map(|m| m.into_iter().map(|v| names[v as usize].clone()).collect())
        .collect()
}

fn partition(entries: &[VertexEntry], clusters: &[Vec<String>], side: &str) -> Result<Partition> {
    let index: FxHashMap<&str, usize> = entries.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    if index.len() != entries.len() {
        return Err(Error::Document(format!("duplicate {side} vertex name")));
    }
    let mut assignment = vec![u32::MAX; entries.len()];
    for (c, members) in clusters.iter().enumerate() {
        for name in members {
            let v = *index
                .get(name.as_str())
                .ok_or_else(|| Error::Document(format!("{side} cluster {c} lists unknown vertex {name:?}")))?;
            if assignment[v] != u32::MAX {
                return Err(Error::Document(format!("{side} vertex {name:?} is in two clusters")));
            }
            assignment[v] = c as u32;
        }
    }
    if let Some(v) = assignment.iter().position(|&c| c == u32::MAX) {
        return Err(Error::Document(format!("{side} vertex {:?} is in no cluster", entries[v].name)));
    }
    Partition::new(assignment).map_err(|e| Error::Document(e.to_string()))
}

impl ModelDocument {
    pub fn new(model: &ImageGraphModel, breakdown: &CriterionBreakdown<f64>) -> Self {
        let basis = model.basis();
        Self {
            format_version: FORMAT_VERSION,
            num_edges: basis.num_edges,
            source_vertices: vertices(basis, Side::Source),
            target_vertices: vertices(basis, Side::Target),
            source_clusters: clusters(model, Side::Source),
            target_clusters: clusters(model, Side::Target),
            segments: model.segment_bounds(),
            cells: model
                .dense_cells()
                .into_iter()
                .map(|c| [u64::from(c.source), u64::from(c.target), u64::from(c.segment), c.count])
                .collect(),
            criterion: *breakdown,
        }
    }

    /// Scores `model` and wraps it.
    pub fn scored(criterion: &Criterion<f64>, model: &ImageGraphModel) -> Result<Self> {
        Ok(Self::new(model, &criterion.cost(model)?))
    }

    pub fn basis(&self) -> ModelBasis {
        ModelBasis {
            source_names: self.source_vertices.iter().map(|v| v.name.clone()).collect(),
            target_names: self.target_vertices.iter().map(|v| v.name.clone()).collect(),
            source_degrees: self.source_vertices.iter().map(|v| v.degree).collect(),
            target_degrees: self.target_vertices.iter().map(|v| v.degree).collect(),
            num_edges: self.num_edges,
        }
    }

    pub fn to_model(&self) -> Result<ImageGraphModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Document(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let basis = Arc::new(self.basis());
        for (side, v) in [("source", &basis.source_degrees), ("target", &basis.target_degrees)] {
            if v.iter().sum::<u64>() != basis.num_edges {
                return Err(Error::Document(format!("{side} degrees do not sum to num_edges")));
            }
        }
        let sources = partition(&self.source_vertices, &self.source_clusters, "source")?;
        let targets = partition(&self.target_vertices, &self.target_clusters, "target")?;
        let cells = self
            .cells
            .iter()
            .map(|&[i, j, n, count]| {
                let narrow = |x: u64| u32::try_from(x).map_err(|_| Error::Document(format!("index {x} is too large")));
                Ok(Cell { source: narrow(i)?, target: narrow(j)?, segment: narrow(n)?, count })
            })
            .collect::<Result<Vec<_>>>()?;
        ImageGraphModel::from_dense(basis, &sources, &targets, &self.segments, &cells)
            .map_err(|e| Error::Document(e.to_string()))
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        serde_json::from_reader(input).map_err(|e| Error::Document(e.to_string()))
    }

    /// `cluster_side, cluster, vertex` rows.
    pub fn write_cluster_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "side\tcluster\tvertex")?;
        for (side, clusters) in [("source", &self.source_clusters), ("target", &self.target_clusters)] {
            for (c, members) in clusters.iter().enumerate() {
                for name in members {
                    writeln!(out, "{side}\t{c}\t{name}")?;
                }
            }
        }
        Ok(())
    }

    pub fn write_segment_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "segment\tfirst_rank\tlast_rank\tsize\tt_min\tt_max")?;
        for (n, s) in self.segments.iter().enumerate() {
            writeln!(out, "{n}\t{}\t{}\t{}\t{}\t{}", s.first_rank, s.last_rank, s.size, s.t_min, s.t_max)?;
        }
        Ok(())
    }

    pub fn write_cell_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "source_cluster\ttarget_cluster\tsegment\tcount")?;
        for [i, j, n, c] in &self.cells {
            writeln!(out, "{i}\t{j}\t{n}\t{c}")?;
        }
        Ok(())
    }
}
