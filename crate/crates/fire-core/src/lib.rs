//! Paired signed-distance (SDF) and directional-distance (DDF) neural fields
//! over a family of shapes, with a one-evaluation-per-ray depth renderer, a
//! sphere-tracing baseline, and latent-code reconstruction from posed depth
//! maps or silhouettes.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`oracle`] — analytic/mesh ground-truth shapes and dataset sampling
//! * [`diffcore`] — reverse-mode tape, tensor ops, Adam
//! * [`fields`] — feature planes, positional encoding, the SDF/DDF networks
//! * [`train`] — losses, the autodecoder training loop, checkpoints
//! * [`render`] — cameras, the DDF renderer, sphere tracing, image output
//! * [`fire`] — latent-code reconstruction from depth or silhouettes
//! * [`eval`] — marching cubes, chamfer distance, benchmarking
//! * [`cli`] — the `fire` command-line front end

pub mod cli;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod fields;
pub mod fire;
pub mod geom;
pub mod oracle;
pub(crate) mod par;
pub mod render;
pub mod train;

pub use error::FireError;

/// Tool version string echoed into every output directory.
pub const VERSION: &str = concat!("fire ", env!("CARGO_PKG_VERSION"));
