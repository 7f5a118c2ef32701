//! Few-shot smart annotation for crowded scenes.
//!
//! Dense point prompts come from a heatmap over semantic features, are
//! pruned by a budgeted sampler while masks are decoded, scored by a small
//! part/whole discrimination network, and merged into detections. The
//! frozen backbones sit behind the traits in [`backbone`]; an oracle
//! backend over synthetic scenes makes every stage testable without
//! model weights.

pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod eps;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prompt;
pub mod pwdnet;
pub mod rng;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
