//! Multi-view adversarial patch synthesis.
//!
//! A patch (RGB texture plus opacity mask) is attached to a target object in
//! a quad scene, rendered from ring-sampled viewpoints by a differentiable
//! ray caster, scored by a detector, and optimized with sign-gradient PGD in
//! two stages (texture, then opacity). Evaluation covers attack success over
//! held-out viewpoints and simplified object-goal navigation episodes.

pub mod camera;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod optimize;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod sampler;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
