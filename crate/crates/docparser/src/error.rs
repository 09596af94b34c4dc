//! Error types for each pipeline stage.

use std::path::PathBuf;
use thiserror::Error;

/// Errors raised while loading a source tree from disk.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed archive {path}: {reason}")]
    MalformedArchive { path: PathBuf, reason: String },
    #[error("no .tex file found in {path}")]
    EmptySource { path: PathBuf },
    #[error("no file with a document-class declaration")]
    NoMainFile,
    #[error("include cycle: {chain}")]
    IncludeCycle { chain: String },
}

/// Errors raised while compiling, rasterizing, or diffing renders.
#[derive(Debug, Error)]
pub enum RenderError {
    #[error("compile failed: {reason}")]
    CompileFailure { reason: String },
    #[error("compile timed out after {seconds}s")]
    CompileTimeout { seconds: u64 },
    #[error("rasterization failed: {reason}")]
    RasterFailure { reason: String },
    #[error("page mismatch: variant has {variant} pages, baseline has {baseline}")]
    PageMismatch { variant: usize, baseline: usize },
    #[error("no differing pixels between variant and baseline")]
    EmptyDiff,
    #[error("color wrapping failed for unit {unit_id}: {reason}")]
    WrapFailure { unit_id: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised by the scoring kit.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions vs {gts} ground-truth labels")]
    LengthMismatch { preds: usize, gts: usize },
}

/// Errors raised when reading or validating genome records.
#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Violation(String),
}

/// Top-level pipeline error. Only ingest-stage failures abort a document;
/// later stages degrade into warnings on the genome record.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest failed: {0}")]
    Ingest(#[from] IngestError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Schema(#[from] SchemaError),
}
