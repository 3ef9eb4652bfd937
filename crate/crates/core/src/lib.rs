//! Two-view coarse-to-fine leaf classification.
//!
//! A global view (whole segmented leaf) ranks genera, a local view (center
//! crop) ranks species inside the retrieved genera, and the two are fused by
//! genus frequency.

pub mod dataset;
pub mod error;
pub mod metricnet;
pub mod pairgen;
pub mod preprocess;

pub use error::{Error, Result};
pub mod evalkit;
pub mod hclassifier;
pub mod refstore;
pub mod synthbench;
