//! Shared error type for the toolkit.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! grouped by what went wrong rather than where: I/O and parse failures keep
//! the offending path, data-shape problems carry enough context to locate the
//! bad row or file, and algorithmic preconditions get their own variants so
//! callers can distinguish "your inputs are malformed" from "the estimate is
//! mathematically undefined here".

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying filesystem failure while reading or writing `path`.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSON document failed to parse.
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A binary matrix file violated the on-disk format (bad magic bytes,
    /// unknown version or element type, or a payload whose byte count does
    /// not match the header).
    #[error("malformed matrix file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A stored checksum did not match the bytes on disk.
    #[error("checksum mismatch for {path}: manifest says {expected}, file hashes to {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    /// A NaN or infinity where only finite values are allowed.
    #[error("non-finite value at row {row}, column {col} in {context}")]
    NonFinite {
        context: String,
        row: usize,
        col: usize,
    },

    /// A manifest or record file is structurally invalid (wrong schema
    /// version, duplicate ids, broken pairing, labels out of range, ...).
    #[error("invalid bundle description: {0}")]
    Schema(String),

    /// Representation files and prediction records disagree about shape:
    /// row counts, dimensions, or role coverage do not line up.
    #[error("misaligned bundle: {0}")]
    Misaligned(String),

    /// A caller-supplied argument or configuration value is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// The estimator has no defined value on this input (for example, all
    /// neighbor distances equal, which makes the log-ratio sum zero).
    #[error("estimate undefined: {0}")]
    Undefined(String),

    /// No candidate points carry the requested label.
    #[error("no candidates with label {label} in {context}")]
    EmptyCandidates { label: u32, context: String },

    /// A token sequence was not found in the precomputed confidence store.
    #[error("no stored confidence vector for token sequence with key {key}")]
    OracleMiss { key: String },

    /// A train/test split left one side without both classes.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// A per-example feature computation failed; wraps the underlying error
    /// with the example and layer it came from.
    #[error("feature extraction failed for example {example_id}, layer {layer_id}: {source}")]
    FeatureExtraction {
        example_id: String,
        layer_id: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the example and layer a feature computation was
    /// working on when it failed.
    pub fn for_example(self, example_id: &str, layer_id: u32) -> Self {
        Error::FeatureExtraction {
            example_id: example_id.to_string(),
            layer_id,
            source: Box::new(self),
        }
    }
}
