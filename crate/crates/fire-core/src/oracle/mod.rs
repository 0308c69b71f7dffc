//! Ground-truth shapes: exact signed distances, exact ray casts, and the
//! dataset samplers that supervise the fields.
//!
//! Oracles are immutable after construction; the samplers are pure
//! functions of (oracle, parameters, seed).

mod dataset;
pub mod mesh;

pub use dataset::{read_dataset, write_dataset, DdfSample, SdfSample, ShapeDataset};

use crate::error::{FireError, Result};
use crate::geom::{unit_sphere_exit, vec3, Vec3};
use mesh::TriMesh;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Signed-distance truncation used for SDF supervision.
pub const TAU: f64 = 0.1;

/// Containment padding for perturbed surface samples.
pub const EPS_PAD: f64 = 0.01;

const RAYCAST_FLOOR: f64 = 1e-3;
const BISECT_TOL: f64 = 1e-7;
const MAX_REJECTS: usize = 10_000;

#[derive(Debug, Clone)]
pub enum ShapeKind {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: Vec3,
    },
    /// Ring in the xy-plane around the z axis.
    Torus {
        ring_radius: f64,
        tube_radius: f64,
    },
    Union {
        a: Box<ShapeOracle>,
        a_offset: Vec3,
        b: Box<ShapeOracle>,
        b_offset: Vec3,
    },
    Mesh(TriMesh),
}

#[derive(Debug, Clone)]
pub struct ShapeOracle {
    kind: ShapeKind,
    max_extent: f64,
}

impl ShapeOracle {
    pub fn sphere(radius: f64) -> Result<ShapeOracle> {
        if !(radius > 0.0) {
            return Err(FireError::invalid("sphere radius must be positive"));
        }
        Self::build(ShapeKind::Sphere { radius }, radius)
    }

    pub fn cuboid(half_extents: Vec3) -> Result<ShapeOracle> {
        if !(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0) {
            return Err(FireError::invalid("box half-extents must be positive"));
        }
        Self::build(ShapeKind::Box { half_extents }, half_extents.norm())
    }

    pub fn torus(ring_radius: f64, tube_radius: f64) -> Result<ShapeOracle> {
        if !(ring_radius > 0.0 && tube_radius > 0.0 && tube_radius < ring_radius) {
            return Err(FireError::invalid(
                "torus requires 0 < tube_radius < ring_radius",
            ));
        }
        Self::build(
            ShapeKind::Torus {
                ring_radius,
                tube_radius,
            },
            ring_radius + tube_radius,
        )
    }

    pub fn union(a: ShapeOracle, a_offset: Vec3, b: ShapeOracle, b_offset: Vec3) -> Result<ShapeOracle> {
        let extent = (a.max_extent + a_offset.norm()).max(b.max_extent + b_offset.norm());
        Self::build(
            ShapeKind::Union {
                a: Box::new(a),
                a_offset,
                b: Box::new(b),
                b_offset,
            },
            extent,
        )
    }

    pub fn mesh(mesh: TriMesh) -> Result<ShapeOracle> {
        if mesh.tri_count() == 0 {
            return Err(FireError::invalid("mesh oracle requires triangles"));
        }
        let extent = mesh.max_vertex_norm();
        Self::build(ShapeKind::Mesh(mesh), extent)
    }

    fn build(kind: ShapeKind, max_extent: f64) -> Result<ShapeOracle> {
        if max_extent >= 1.0 {
            return Err(FireError::invalid(format!(
                "shape extent {max_extent:.4} must be strictly inside the unit sphere"
            )));
        }
        Ok(ShapeOracle { kind, max_extent })
    }

    pub fn kind(&self) -> &ShapeKind {
        &self.kind
    }

    pub fn max_extent(&self) -> f64 {
        self.max_extent
    }

    /// Exact signed distance (lower-bound distance for unions).
    pub fn sdf(&self, x: Vec3) -> Result<f64> {
        if !x.is_finite() {
            return Err(FireError::invalid("non-finite query point"));
        }
        Ok(self.sdf_unchecked(x))
    }

    fn sdf_unchecked(&self, x: Vec3) -> f64 {
        match &self.kind {
            ShapeKind::Sphere { radius } => x.norm() - radius,
            ShapeKind::Box { half_extents } => {
                let q = x.abs() - *half_extents;
                let outside = vec3(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                outside.norm() + q.max_comp().min(0.0)
            }
            ShapeKind::Torus {
                ring_radius,
                tube_radius,
            } => {
                let ring = (x.x * x.x + x.y * x.y).sqrt() - ring_radius;
                (ring * ring + x.z * x.z).sqrt() - tube_radius
            }
            ShapeKind::Union {
                a,
                a_offset,
                b,
                b_offset,
            } => a
                .sdf_unchecked(x - *a_offset)
                .min(b.sdf_unchecked(x - *b_offset)),
            ShapeKind::Mesh(mesh) => {
                let d = mesh.distance(x);
                if mesh.is_inside(x) {
                    -d
                } else {
                    d
                }
            }
        }
    }

    /// Cast a ray from a point on the unit sphere; `d` is the Euclidean
    /// distance to the first intersection with the shape.
    pub fn ray_cast(&self, p: Vec3, r: Vec3) -> Result<Option<f64>> {
        let n = r.norm();
        if n < 1e-8 {
            return Err(FireError::invalid("degenerate ray direction"));
        }
        if (p.norm() - 1.0).abs() > 1e-6 {
            return Err(FireError::invalid("ray origin must lie on the unit sphere"));
        }
        Ok(self.raycast_from(p, r / n))
    }

    /// Ray cast from an arbitrary origin (assumed outside the shape);
    /// `dir` must be unit length.
    pub(crate) fn raycast_from(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match &self.kind {
            ShapeKind::Sphere { radius } => {
                let b = origin.dot(dir);
                let c = origin.norm_sq() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = -b - sq;
                let t1 = -b + sq;
                first_nonneg(t0, t1)
            }
            ShapeKind::Box { half_extents } => {
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for i in 0..3 {
                    let h = half_extents.comp(i);
                    let o = origin.comp(i);
                    let d = dir.comp(i);
                    if d.abs() < 1e-15 {
                        if o.abs() > h {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / d;
                        let (t0, t1) = {
                            let a = (-h - o) * inv;
                            let b = (h - o) * inv;
                            if a < b {
                                (a, b)
                            } else {
                                (b, a)
                            }
                        };
                        tmin = tmin.max(t0);
                        tmax = tmax.min(t1);
                        if tmin > tmax {
                            return None;
                        }
                    }
                }
                first_nonneg(tmin, tmax)
            }
            ShapeKind::Torus { .. } => self.march_bisect(origin, dir),
            ShapeKind::Union {
                a,
                a_offset,
                b,
                b_offset,
            } => {
                let ta = a.raycast_from(origin - *a_offset, dir);
                let tb = b.raycast_from(origin - *b_offset, dir);
                match (ta, tb) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (Some(x), None) => Some(x),
                    (None, Some(y)) => Some(y),
                    (None, None) => None,
                }
            }
            ShapeKind::Mesh(mesh) => mesh.ray_nearest(origin, dir),
        }
    }

    /// Sign-bracketing march along the ray followed by bisection on the
    /// implicit function. The march step is the exact SDF with a floor, so
    /// a sign change cannot be skipped except for sub-floor grazes.
    fn march_bisect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let t_exit = unit_sphere_exit(origin, dir) + RAYCAST_FLOOR;
        let mut t = 0.0;
        let mut f_prev = self.sdf_unchecked(origin);
        if f_prev <= 0.0 {
            return Some(0.0);
        }
        while t < t_exit {
            let step = f_prev.max(RAYCAST_FLOOR);
            let t_next = t + step;
            let f_next = self.sdf_unchecked(origin + dir * t_next);
            if f_next < 0.0 {
                // bracketed: bisect [t, t_next]
                let (mut lo, mut hi) = (t, t_next);
                while hi - lo > BISECT_TOL {
                    let mid = 0.5 * (lo + hi);
                    if self.sdf_unchecked(origin + dir * mid) < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            t = t_next;
            f_prev = f_next;
        }
        None
    }

    /// Uniform-measure point on the shape surface.
    pub fn sample_surface(&self, rng: &mut ChaCha12Rng) -> Vec3 {
        match &self.kind {
            ShapeKind::Sphere { radius } => uniform_dir(rng) * *radius,
            ShapeKind::Box { half_extents } => {
                let h = *half_extents;
                let areas = [h.y * h.z, h.z * h.x, h.x * h.y]; // per axis-pair, x4
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.gen::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let u = (rng.gen::<f64>() * 2.0 - 1.0) * h.comp((axis + 1) % 3);
                let v = (rng.gen::<f64>() * 2.0 - 1.0) * h.comp((axis + 2) % 3);
                let mut out = [0.0; 3];
                out[axis] = side * h.comp(axis);
                out[(axis + 1) % 3] = u;
                out[(axis + 2) % 3] = v;
                Vec3::from_array(out)
            }
            ShapeKind::Torus {
                ring_radius,
                tube_radius,
            } => {
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                // area element weights by (R + r cos phi); rejection keeps it uniform
                let phi = loop {
                    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                    let w = (ring_radius + tube_radius * phi.cos()) / (ring_radius + tube_radius);
                    if rng.gen::<f64>() < w {
                        break phi;
                    }
                };
                let ring = ring_radius + tube_radius * phi.cos();
                vec3(
                    ring * theta.cos(),
                    ring * theta.sin(),
                    tube_radius * phi.sin(),
                )
            }
            ShapeKind::Union {
                a,
                a_offset,
                b,
                b_offset,
            } => {
                let (wa, wb) = (a.surface_area_estimate(), b.surface_area_estimate());
                loop {
                    let on_a = rng.gen::<f64>() * (wa + wb) < wa;
                    let (child, off, other, other_off) = if on_a {
                        (a, a_offset, b, b_offset)
                    } else {
                        (b, b_offset, a, a_offset)
                    };
                    let x = child.sample_surface(rng) + *off;
                    if other.sdf_unchecked(x - *other_off) > 0.0 {
                        return x;
                    }
                }
            }
            ShapeKind::Mesh(mesh) => mesh.sample_surface(rng),
        }
    }

    fn surface_area_estimate(&self) -> f64 {
        match &self.kind {
            ShapeKind::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            ShapeKind::Box { half_extents } => {
                let h = *half_extents;
                8.0 * (h.x * h.y + h.y * h.z + h.z * h.x)
            }
            ShapeKind::Torus {
                ring_radius,
                tube_radius,
            } => 4.0 * std::f64::consts::PI * std::f64::consts::PI * ring_radius * tube_radius,
            ShapeKind::Union { a, b, .. } => {
                a.surface_area_estimate() + b.surface_area_estimate()
            }
            ShapeKind::Mesh(mesh) => mesh.total_area(),
        }
    }
}

fn first_nonneg(t0: f64, t1: f64) -> Option<f64> {
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        Some(t1)
    } else {
        None
    }
}

pub fn uniform_dir(rng: &mut ChaCha12Rng) -> Vec3 {
    let z = 1.0 - 2.0 * rng.gen::<f64>();
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let s = (1.0 - z * z).max(0.0).sqrt();
    vec3(s * phi.cos(), s * phi.sin(), z)
}

/// Uniform point in the closed unit ball (rejection from the cube).
pub fn uniform_in_ball(rng: &mut ChaCha12Rng) -> Vec3 {
    loop {
        let x = vec3(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if x.norm_sq() <= 1.0 {
            return x;
        }
    }
}

fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; u1 in (0,1]
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Surface-biased plus uniform SDF samples, labels clamped to `[-TAU, TAU]`.
///
/// `n_surface` points are surface samples perturbed by Gaussian noise at the
/// two scales (split evenly); `n_uniform` are uniform in the unit ball.
pub fn sample_sdf_points(
    oracle: &ShapeOracle,
    n_surface: usize,
    n_uniform: usize,
    noise_sigmas: (f64, f64),
    seed: u64,
) -> Vec<SdfSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_surface + n_uniform);
    let half = n_surface / 2;
    for i in 0..n_surface {
        let sigma = if i < half { noise_sigmas.0 } else { noise_sigmas.1 };
        let x = loop {
            let s = oracle.sample_surface(&mut rng);
            let x = s + vec3(
                sigma * gaussian(&mut rng),
                sigma * gaussian(&mut rng),
                sigma * gaussian(&mut rng),
            );
            if x.norm() <= 1.0 + EPS_PAD {
                break x;
            }
        };
        let s_gt = oracle.sdf_unchecked(x).clamp(-TAU, TAU);
        out.push(SdfSample { x, s_gt });
    }
    for _ in 0..n_uniform {
        let x = uniform_in_ball(&mut rng);
        let s_gt = oracle.sdf_unchecked(x).clamp(-TAU, TAU);
        out.push(SdfSample { x, s_gt });
    }
    out
}

/// Hit rays aimed at surface samples plus rejection-sampled miss rays.
pub fn sample_ddf_rays(
    oracle: &ShapeOracle,
    n_hit: usize,
    n_miss: usize,
    seed: u64,
) -> Result<Vec<DdfSample>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_hit + n_miss);
    for _ in 0..n_hit {
        let mut found = false;
        for _ in 0..MAX_REJECTS {
            let p = uniform_dir(&mut rng);
            let target = oracle.sample_surface(&mut rng);
            let r = (target - p).normalized();
            if let Some(d) = oracle.raycast_from(p, r) {
                out.push(DdfSample {
                    p,
                    r,
                    d_gt: d,
                    hit: true,
                });
                found = true;
                break;
            }
        }
        if !found {
            return Err(FireError::Generation(
                "could not generate a hit ray in 10000 attempts".into(),
            ));
        }
    }
    for _ in 0..n_miss {
        let mut found = false;
        for _ in 0..MAX_REJECTS {
            let p = uniform_dir(&mut rng);
            let r = uniform_dir(&mut rng);
            if oracle.raycast_from(p, r).is_none() {
                out.push(DdfSample {
                    p,
                    r,
                    d_gt: 0.0,
                    hit: false,
                });
                found = true;
                break;
            }
        }
        if !found {
            return Err(FireError::Generation(
                "could not generate a miss ray in 10000 attempts".into(),
            ));
        }
    }
    Ok(out)
}
