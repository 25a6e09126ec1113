//! Loss-aware label assignment for crowded pedestrian detection.
//!
//! The crate builds joint classification/regression cost matrices between
//! ground-truth boxes and anchors, selects each GT's K cheapest in-box
//! anchors, and resolves anchors claimed by several GTs. IoU-threshold,
//! center-sampling and adaptive-threshold assigners are provided for
//! comparison, along with a synthetic crowd-scene generator, a geometry-driven
//! mock predictor, and miss-rate / AP / ambiguity metrics.

pub mod anchors;
pub mod assign;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod scene;

pub use error::{Error, Result};
