//! Document genome extraction library.
//!
//! Turns LaTeX source packages into structured "genome" records: reading-
//! ordered component units with layout attributes, inter-unit relations,
//! rendered bounding boxes recovered by color-isolation rendering, and a
//! per-document quality grade, plus an evaluation metric kit for models
//! trained against such records.

pub mod annotate;
pub mod bbox;
pub mod config;
pub mod error;
pub mod genome;
pub mod ingest;
pub mod latex;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod quality;
pub mod render;
pub mod segment;
pub mod source;

/// Version stamped on every genome record. Bump when the extraction
/// behavior changes in a way that alters output.
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
