//! Estimate the date of an undated text document from a corpus of dated ones.
//!
//! Four daters share one preprocessing and shingle-indexing layer:
//!
//! * [`knn`]: kernel-weighted average of training dates, with per-document bandwidths
//!   chosen by local leave-one-out cross-validation.
//! * [`prevalence`]: maximum prevalence. Each shingle gets a time-varying occurrence
//!   probability from a kernel-localized binomial likelihood; the document is dated
//!   where the product of its shingles' probabilities peaks.
//! * [`quantile`]: the year minimizing a kernel-weighted lower quantile of the
//!   distances from the document to the training documents.
//! * [`mt`]: matching-pattern scoring of every substring shared with the training
//!   corpus, aggregated per year and refined over shrinking windows.
//!
//! [`ensemble`] blends daters, and [`eval`] provides the train/validation/test
//! protocol together with a synthetic generative corpus model used as ground truth.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod kernel;
pub mod knn;
pub mod metrics;
pub mod mt;
pub mod prevalence;
pub mod quantile;

pub use corpus::{Document, RawDocument, Shingle, ShingleIndex};
pub use error::{Error, Result};
pub use estimate::{DateEstimate, Diagnostics, Flag};
pub use kernel::{KernelShape, KernelSpec};
pub use metrics::{DistanceSpec, Family, VectorMode};
