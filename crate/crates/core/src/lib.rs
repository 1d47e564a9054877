//! Matching, fusion, re-ranking and evaluation for object re-identification
//! embeddings.
//!
//! The engine is model-agnostic: it reads item manifests (JSON-Lines) and
//! `REIDVEC1` vector files, fuses base/refinement/text channels, optionally
//! expands queries and re-ranks with k-reciprocal encoding, and reports mAP
//! and CMC against a baseline run. A synthetic generator produces datasets in
//! the same formats.

pub mod data_io;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod fusion;
pub mod harness;
pub mod ops;
pub mod rerank;
pub mod simulator;

pub use data_io::{ClassLabel, Condition, EmbeddingSet, ItemRecord, Kind, Manifest, Split};
pub use error::{Error, Result};
pub use eval::{EvalReport, Protocol};
pub use fusion::{FusionMethod, FusionSpec, SourceTag};
pub use ops::{DistanceMatrix, Metric};
pub use rerank::RerankParams;
pub use simulator::SimSpec;
