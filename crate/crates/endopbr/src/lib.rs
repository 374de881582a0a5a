//! Differentiable physically-based inverse rendering for endoscopic scenes.
//!
//! Estimates material (BRDF) and spotlight parameters from posed RGB images
//! with known depth, renders photorealistic novel views, and exports
//! augmented synthetic datasets.

pub mod brdf;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod geometry;
pub mod hashgrid;
pub mod lighting;
pub mod metrics;
pub mod model;
pub mod renderer;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
