//! Coarse-to-fine neural field stylization for sparse-view scenes.
//!
//! A low-frequency coarse radiance field is first fitted to a handful of
//! posed images. A second, hash-grid fine field then learns a residual
//! density and a stylized color on top of the frozen coarse geometry, driven
//! by a content loss and a nearest-neighbor feature-matching style loss
//! whose balance is annealed over the iterations. Multi-view consistency of
//! the result is measured by warping renders between poses.
//!
//! Everything runs on the small reverse-mode differentiation core in
//! [`diffcore`]; see the crate's `examples/` directory for one runnable
//! program per capability.

pub mod cli;
pub mod diffcore;
pub mod encodings;
mod error;
pub mod features;
pub mod fields;
pub mod metrics;
pub mod objectives;
pub mod renderer;
pub mod sceneio;
pub mod trainer;

pub use error::{Error, Result};
