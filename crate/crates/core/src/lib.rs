//! Differentiable 3D Gaussian splatting for sparse-view novel view synthesis,
//! with semantic and local depth regularizers on synthesized side views.
//!
//! The pipeline: [`rasterizer::render`] composites a [`scene::GaussianCloud`]
//! for a [`scene::Camera`], [`losses::total_loss`] scores it against ground
//! truth and [`priors`], [`rasterizer::render_backward`] pulls gradients back
//! to the parameters, and [`trainer`] runs Adam over them.

pub mod buffer;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod priors;
pub mod rasterizer;
pub mod scene;
pub mod side_views;
pub mod trainer;

pub use error::{Error, Result};
