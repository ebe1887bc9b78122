//! Object-centric rigid-body world models built from projective geometric
//! algebra.
//!
//! The crate bundles everything needed to go from a simulated 2D scene to an
//! evaluated dynamics model:
//!
//! - [`ga`]: the algebra Cl(2,0,1) itself.
//! - [`tensor`]: a small reverse-mode autodiff engine plus AdamW.
//! - [`layers`], [`attention`], [`model`]: Clifford layers, geometric
//!   attention and the world-model variants.
//! - [`sim`]: the rigid-body simulator used as data source and reference.
//! - [`dataset`], [`training`], [`eval`]: data files, training loop, metrics.
//! - [`render`]: SVG output of rollouts.

pub mod attention;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ga;
pub mod layers;
pub mod model;
pub mod render;
pub mod sim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use ga::Multivector;

/// Caps the worker pool used by generation and evaluation. Only the first
/// call has an effect.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
