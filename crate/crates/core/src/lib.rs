//! Semantic-context label hierarchies for dense scene labelling.
//!
//! Classes are split into subclasses either by image scene name or by
//! clustering the label histograms around each training patch. A small
//! convolutional classifier is then fine-tuned on the subclasses, either in
//! sequence (subclasses first, then the original classes) or jointly through
//! a sparse matrix that sums subclass scores into class scores.

pub mod data;
pub mod eval;
pub mod error;
pub mod hierarchy;
pub mod ingest;
pub mod network;
pub mod rng;
pub mod schedule;

pub use data::*;
pub use error::{Error, Result};
