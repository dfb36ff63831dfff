//! Window-level operational-context and motion-intensity indexing for long
//! first-person videos.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`corpus`] probes videos, partitions them into fixed windows, samples
//!   frames and builds labeling sample plans.
//! * [`annotation`] holds the label vocabularies, per-window annotations,
//!   the label store and inter-annotator agreement.
//! * [`audits`] computes dataset integrity and label statistics.
//! * [`features`] turns sampled frames into pooled embeddings, dense optical
//!   flow motion summaries and fused vectors.
//! * [`models`] trains and applies softmax classifiers.
//! * [`timeline`] generates per-video timelines and runs evaluation grids.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod audits;
pub mod corpus;
pub mod error;
pub mod features;
pub mod models;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod timeline;

pub use error::{Error, Result};
