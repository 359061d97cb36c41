//! Parameter-free triclustering of time-evolving directed multigraphs.
//!
//! Source vertices, target vertices and the (rank-discretized) time axis are
//! partitioned jointly by minimizing an exact MODL criterion. The fitted
//! image-graph sequence can then be coarsened by informativity and read
//! through mutual-information diagnostics.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix it to `f64`,
//! which is what the CLI uses.

pub mod analytics;
pub mod combinatorics;
pub mod criterion;
pub mod error;
pub mod export;
pub mod graph;
pub mod model;
pub mod optimizer;
pub mod refine;
pub mod scalar;
pub mod simplifier;
pub mod synthgen;

pub use error::{Error, Result};
pub use graph::{read_edge_list, write_edge_list, IndexedEdge, TemporalEdge, TemporalGraph};
pub use model::{
    Cell, ClusterId, ImageGraphModel, Merge, MergeKind, ModelBasis, Partition, SegmentBounds, SegmentId, Side,
    TimeSegmentation,
};
pub use export::ModelDocument;
pub use optimizer::{vns_optimize, OptimizerConfig};
pub use scalar::Real;
pub use synthgen::{generate_patterned, rewire_all, shuffle_timestamps, GroundTruth, PatternSpec};

pub type Criterion = criterion::Criterion<f64>;
pub type CriterionBreakdown = criterion::CriterionBreakdown<f64>;
pub type MergeProposal = criterion::MergeProposal<f64>;
pub type ScoredModel = criterion::ScoredModel<f64>;
pub type CombinatoricsTable = combinatorics::CombinatoricsTable<f64>;
pub type Optimizer<'g> = optimizer::Optimizer<'g, f64>;
pub type CoarseningTrace = simplifier::CoarseningTrace<f64>;
pub type MiReport = analytics::MiReport<f64>;

pub type Criterion32 = criterion::Criterion<f32>;
pub type CriterionBreakdown32 = criterion::CriterionBreakdown<f32>;
pub type Optimizer32<'g> = optimizer::Optimizer<'g, f32>;
pub type MiReport32 = analytics::MiReport<f32>;
