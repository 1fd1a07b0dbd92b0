//! Geometry-based detection of adversarial text examples.
//!
//! Attacked inputs tend to sit off the data manifold that a victim
//! model's hidden representations trace out. This crate turns that
//! observation into detectors that need nothing but representation
//! matrices:
//!
//! * [`lid`] — local intrinsic dimensionality profiles: adversarial
//!   points see a locally "thicker" neighborhood, so maximum-likelihood
//!   LID estimates over seeded neighborhood batches separate them from
//!   clean points.
//! * [`mdre`] — a multi-distance ensemble: for each example, its
//!   distance to the nearest training point of the predicted class,
//!   measured under several representation models at once, feeds a
//!   logistic detector.
//! * [`fgws`] — a frequency-guided word substitution baseline that works
//!   on tokens and a prediction oracle rather than representations.
//! * [`detect`] — the shared logistic-regression layer: training,
//!   deterministic splits, and evaluation reports.
//!
//! Representation matrices, predictions, and normal/adversarial pairings
//! travel as "bundles" (a manifest plus checksummed binary matrices; see
//! [`repstore`]), and [`synthgen`] fabricates fully synthetic bundles
//! with known geometry for tests and benchmarks.
//!
//! Everything seeded is deterministic: the same inputs, seeds, and flags
//! produce bit-identical outputs regardless of thread count.

pub mod detect;
pub mod error;
pub mod features;
pub mod fgws;
pub mod knn;
pub mod lid;
pub mod matrix;
pub mod mdre;
pub mod repstore;
pub mod rng;
pub mod synthgen;

pub use detect::{EvalReport, LogisticHyperparams, LogisticModel, SplitSpec};
pub use error::{Error, Result};
pub use features::FeatureTable;
pub use lid::LidConfig;
pub use matrix::Matrix;
pub use mdre::MdreConfig;
pub use repstore::{load_manifest, validate_bundle, Manifest, Role};
pub use synthgen::SynthConfig;
