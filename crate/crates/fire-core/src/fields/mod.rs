//! Neural field components: positional encoding, factorized feature
//! planes, and the SDF/DDF networks with both a raw (inference) path and a
//! tape (training) path built from the same kernels.

mod models;
mod planes;

pub use models::{
    ddf_forward_tape, sdf_forward_tape, DdfBinding, DdfModel, Dense, Models, SdfBinding, SdfModel,
};
pub use planes::{features_tape, FeaturePlaneSet, PlaneBinding, DDF_PAIRS, SDF_PAIRS};

use crate::diffcore::{NodeId, Tape};

/// Field dimensions. Desk-scale defaults: N=64 planes with K=8 features,
/// L=64 latents, 3 encoding frequencies, hidden widths 256 (SDF) and 512
/// (DDF).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub plane_resolution: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub n_freq: usize,
    pub sdf_hidden: usize,
    pub ddf_hidden: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            plane_resolution: 64,
            feature_dim: 8,
            latent_dim: 64,
            n_freq: 3,
            sdf_hidden: 256,
            ddf_hidden: 512,
        }
    }
}

impl FieldConfig {
    /// Tiny configuration used by the gradient suites.
    pub fn tiny() -> Self {
        FieldConfig {
            plane_resolution: 4,
            feature_dim: 2,
            latent_dim: 4,
            n_freq: 3,
            sdf_hidden: 8,
            ddf_hidden: 8,
        }
    }

    pub fn encoded_dim(n_coords: usize, n_freq: usize) -> usize {
        n_coords * (1 + 2 * n_freq)
    }

    pub fn sdf_input_dim(&self) -> usize {
        Self::encoded_dim(3, self.n_freq) + self.latent_dim + 3 * self.feature_dim
    }

    pub fn ddf_input_dim(&self) -> usize {
        Self::encoded_dim(6, self.n_freq) + self.latent_dim + 15 * self.feature_dim
    }
}

/// Appends the encoding of `coords` to `out`: the raw coordinates, then
/// sin/cos blocks at frequencies pi * 2^k for k in 0..n_freq.
pub fn positional_encode(coords: &[f64], n_freq: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(coords);
    let mut freq = std::f64::consts::PI;
    for _ in 0..n_freq {
        for &t in coords {
            out.push((freq * t).sin());
        }
        for &t in coords {
            out.push((freq * t).cos());
        }
        freq *= 2.0;
    }
}

/// Tape twin of [`positional_encode`] over a [B, D] node.
pub fn posenc_tape(tape: &mut Tape, v: NodeId, n_freq: usize) -> NodeId {
    let mut parts = vec![v];
    let mut freq = std::f64::consts::PI;
    for _ in 0..n_freq {
        let s = tape.scale(v, freq);
        parts.push(tape.sin(s));
        parts.push(tape.cos(s));
        freq *= 2.0;
    }
    tape.concat_cols(&parts)
}
