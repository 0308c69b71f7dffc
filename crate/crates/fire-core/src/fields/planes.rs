//! Factorized 2D feature planes: 3 for the SDF field over x, 15 for the
//! DDF field over (p, r).

use crate::diffcore::{NodeId, Parameter, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Coordinate pairs for the SDF planes: xy, yz, zx.
pub const SDF_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Coordinate pairs for the DDF planes over (p_x,p_y,p_z,r_x,r_y,r_z).
///
/// Order: the p-cyclic pairs, then all p x r cross pairs, then the r-cyclic
/// pairs — beginning (p_x,p_y),(p_y,p_z) and ending (r_z,r_x).
pub const DDF_PAIRS: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 0),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (4, 5),
    (5, 3),
];

const COORD_NAMES: [&str; 6] = ["px", "py", "pz", "rx", "ry", "rz"];

const PLANE_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct FeaturePlaneSet {
    pub sdf_planes: Vec<Parameter>,
    pub ddf_planes: Vec<Parameter>,
    pub resolution: usize,
    pub feature_dim: usize,
}

impl FeaturePlaneSet {
    pub fn init(resolution: usize, feature_dim: usize, rng: &mut ChaCha12Rng) -> FeaturePlaneSet {
        assert!(resolution >= 2, "plane resolution must be at least 2");
        let mut make = |name: String| {
            let len = resolution * resolution * feature_dim;
            let data = (0..len)
                .map(|_| gaussian(rng) * PLANE_INIT_STD)
                .collect::<Vec<_>>();
            Parameter::new(
                name,
                Tensor::new(vec![resolution, resolution, feature_dim], data),
            )
        };
        let sdf_planes = ["xy", "yz", "zx"]
            .iter()
            .map(|s| make(format!("plane_s_{s}")))
            .collect();
        let ddf_planes = DDF_PAIRS
            .iter()
            .map(|&(a, b)| make(format!("plane_d_{}{}", COORD_NAMES[a], COORD_NAMES[b])))
            .collect();
        FeaturePlaneSet {
            sdf_planes,
            ddf_planes,
            resolution,
            feature_dim,
        }
    }

    /// Total stored feature values; exactly 18 * N^2 * K.
    pub fn value_count(&self) -> usize {
        self.sdf_planes
            .iter()
            .chain(self.ddf_planes.iter())
            .map(|p| p.value.len())
            .sum()
    }
}

fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Tape bindings for all 18 planes.
pub struct PlaneBinding {
    pub sdf: Vec<NodeId>,
    pub ddf: Vec<NodeId>,
}

impl FeaturePlaneSet {
    pub fn bind(&self, tape: &mut Tape, frozen: bool) -> PlaneBinding {
        let mut leaf = |p: &Parameter| {
            if frozen {
                tape.leaf_frozen(p.value.clone())
            } else {
                tape.leaf(p.value.clone())
            }
        };
        PlaneBinding {
            sdf: self.sdf_planes.iter().map(&mut leaf).collect(),
            ddf: self.ddf_planes.iter().map(&mut leaf).collect(),
        }
    }
}

/// Concatenated plane features for a [B, D] coordinate node using the given
/// pair list; output is [B, pairs.len() * K].
pub fn features_tape(
    tape: &mut Tape,
    plane_leaves: &[NodeId],
    pairs: &[(usize, usize)],
    coords: NodeId,
) -> NodeId {
    assert_eq!(plane_leaves.len(), pairs.len());
    let mut parts = Vec::with_capacity(pairs.len());
    for (leaf, &(a, b)) in plane_leaves.iter().zip(pairs) {
        let ca = tape.slice_cols(coords, a, a + 1);
        let cb = tape.slice_cols(coords, b, b + 1);
        let uv = tape.concat_cols(&[ca, cb]);
        parts.push(tape.bilinear_sample(*leaf, uv));
    }
    tape.concat_cols(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn pair_order_endpoints() {
        assert_eq!(DDF_PAIRS[0], (0, 1)); // (p_x, p_y)
        assert_eq!(DDF_PAIRS[1], (1, 2)); // (p_y, p_z)
        assert_eq!(DDF_PAIRS[14], (5, 3)); // (r_z, r_x)
        // all 15 distinct unordered pairs of 6 coordinates
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &DDF_PAIRS {
            assert!(a != b);
            assert!(seen.insert((a.min(b), a.max(b))));
        }
        assert_eq!(seen.len(), 15);
    }

    #[test]
    fn memory_accounting_is_18_n2_k() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let planes = FeaturePlaneSet::init(8, 4, &mut rng);
        assert_eq!(planes.sdf_planes.len(), 3);
        assert_eq!(planes.ddf_planes.len(), 15);
        assert_eq!(planes.value_count(), 18 * 8 * 8 * 4);
    }
}
