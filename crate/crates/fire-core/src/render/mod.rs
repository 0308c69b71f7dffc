//! Depth rendering: the one-evaluation DDF renderer, the sphere-tracing
//! baseline, finite-difference normals, and Blinn-Phong shading.

mod camera;
pub mod image_io;

pub use camera::{generate_rays, Camera, RayBundle};

use crate::error::Result;
use crate::fields::Models;
use crate::geom::{unit_sphere_exit, Vec3};
use crate::oracle::{ShapeOracle, TAU};

/// Default ray-hit probability threshold for rendering masks.
pub const SIGMA_THRESHOLD: f64 = 0.8;

/// Per-pixel projective depth with a mask; masked-out pixels carry depth 0.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    /// DDF hit probabilities where the renderer produced them.
    pub sigma: Option<Vec<f64>>,
}

impl DepthImage {
    pub fn empty(width: usize, height: usize) -> DepthImage {
        DepthImage {
            width,
            height,
            depth: vec![0.0; width * height],
            mask: vec![false; width * height],
            sigma: None,
        }
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean |depth_a - depth_b| over pixels masked in both images.
    pub fn masked_l1(&self, other: &DepthImage) -> Option<f64> {
        assert_eq!(self.depth.len(), other.depth.len());
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.depth.len() {
            if self.mask[i] && other.mask[i] {
                sum += (self.depth[i] - other.depth[i]).abs();
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }
}

/// Renders depth with exactly one DDF evaluation per sphere-hit pixel.
///
/// Returns the image and the evaluation counter (equal to the number of
/// rays that intersect the unit sphere).
pub fn render_ddf(
    models: &Models,
    z: &[f64],
    camera: &Camera,
    sigma_threshold: f64,
    threads: usize,
) -> Result<(DepthImage, u64)> {
    let bundle = generate_rays(camera)?;
    let mut img = DepthImage::empty(camera.width, camera.height);
    let mut sigma_buf = vec![0.0; camera.width * camera.height];
    let per_ray = crate::par::parallel_chunks(&bundle.sphere_hits, threads, |chunk| {
        let ps: Vec<Vec3> = chunk.iter().map(|&(_, p, _)| p).collect();
        let rs: Vec<Vec3> = chunk.iter().map(|&(i, _, _)| bundle.dirs[i]).collect();
        let (ds, sigmas) = models.ddf_eval_batch(z, &ps, &rs);
        (0..chunk.len()).map(|k| (ds[k], sigmas[k])).collect()
    });
    let evals = bundle.sphere_hits.len() as u64;
    for (k, &(idx, p, _)) in bundle.sphere_hits.iter().enumerate() {
        let (d, sigma) = per_ray[k];
        sigma_buf[idx] = sigma;
        if sigma >= sigma_threshold {
            let x = p + bundle.dirs[idx] * d;
            img.mask[idx] = true;
            img.depth[idx] = camera.projective_depth(x);
        }
    }
    img.sigma = Some(sigma_buf);
    Ok((img, evals))
}

/// Ground-truth depth from an oracle via exact ray casts.
pub fn render_oracle_depth(oracle: &ShapeOracle, camera: &Camera) -> Result<DepthImage> {
    let bundle = generate_rays(camera)?;
    let mut img = DepthImage::empty(camera.width, camera.height);
    for &(idx, p, _) in &bundle.sphere_hits {
        let r = bundle.dirs[idx];
        if let Some(d) = oracle.raycast_from(p, r) {
            let x = p + r * d;
            img.mask[idx] = true;
            img.depth[idx] = camera.projective_depth(x);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Sphere tracing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TraceConfig {
    pub max_steps: usize,
    pub surface_eps: f64,
    /// Cap on the marching step; `Some(TAU)` for truncated fields.
    pub step_clamp: Option<f64>,
}

impl TraceConfig {
    /// Settings for exact (un-truncated) analytic fields.
    pub fn analytic() -> TraceConfig {
        TraceConfig {
            max_steps: 50,
            surface_eps: 5e-4,
            step_clamp: None,
        }
    }

    /// Settings for trained truncated fields.
    pub fn truncated() -> TraceConfig {
        TraceConfig {
            max_steps: 50,
            surface_eps: 5e-4,
            step_clamp: Some(TAU),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    pub hit: bool,
    /// Parameter along the ray from the marching start point.
    pub t: f64,
    pub evals: u32,
    /// Smallest field value seen along the march and where it occurred.
    pub min_f: f64,
    pub t_min: f64,
}

/// Batched sphere tracing: march `t += f(x)` from each start point, hit
/// when `f < surface_eps` (with one secant refinement), miss on leaving
/// `max_t` or exhausting steps. `eval` maps a batch of points to field
/// values; the per-ray counters add up to exactly the rows passed to it.
pub fn sphere_trace_batch(
    mut eval: impl FnMut(&[Vec3]) -> Vec<f64>,
    starts: &[Vec3],
    dirs: &[Vec3],
    max_ts: &[f64],
    cfg: &TraceConfig,
) -> Vec<TraceResult> {
    let n = starts.len();
    assert_eq!(dirs.len(), n);
    assert_eq!(max_ts.len(), n);
    let mut results = vec![
        TraceResult {
            hit: false,
            t: 0.0,
            evals: 0,
            min_f: f64::INFINITY,
            t_min: 0.0,
        };
        n
    ];
    let mut active: Vec<usize> = (0..n).collect();
    let mut ts = vec![0.0f64; n];
    let mut prev: Vec<Option<(f64, f64)>> = vec![None; n];
    while !active.is_empty() {
        let xs: Vec<Vec3> = active.iter().map(|&i| starts[i] + dirs[i] * ts[i]).collect();
        let fs = eval(&xs);
        let mut next_active = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let f = fs[k];
            results[i].evals += 1;
            if f < results[i].min_f {
                results[i].min_f = f;
                results[i].t_min = ts[i];
            }
            if f < cfg.surface_eps {
                let mut t_hit = ts[i];
                if let Some((tp, fp)) = prev[i] {
                    // one secant refinement using the bracketing samples
                    let denom = f - fp;
                    if denom.abs() > 1e-12 {
                        let cand = ts[i] - f * (ts[i] - tp) / denom;
                        if cand.is_finite() && cand >= tp && cand <= ts[i].max(tp) {
                            t_hit = cand;
                        }
                    }
                }
                results[i].hit = true;
                results[i].t = t_hit;
                continue;
            }
            if results[i].evals as usize >= cfg.max_steps {
                continue;
            }
            let step = match cfg.step_clamp {
                Some(c) => f.min(c),
                None => f,
            };
            let t_next = ts[i] + step;
            if t_next > max_ts[i] {
                continue;
            }
            prev[i] = Some((ts[i], f));
            ts[i] = t_next;
            next_active.push(i);
        }
        active = next_active;
    }
    results
}

/// Single-ray wrapper around [`sphere_trace_batch`].
pub fn sphere_trace(
    mut eval: impl FnMut(Vec3) -> f64,
    start: Vec3,
    dir: Vec3,
    max_t: f64,
    cfg: &TraceConfig,
) -> TraceResult {
    sphere_trace_batch(
        |xs| xs.iter().map(|&x| eval(x)).collect(),
        &[start],
        &[dir],
        &[max_t],
        cfg,
    )[0]
}

/// Sphere-traced depth of a trained SDF; returns the image and the total
/// SDF evaluations plus the number of traced (sphere-hit) rays.
pub fn render_sphere_traced(
    models: &Models,
    z: &[f64],
    camera: &Camera,
    cfg: &TraceConfig,
    threads: usize,
) -> Result<(DepthImage, u64, u64)> {
    let bundle = generate_rays(camera)?;
    let mut img = DepthImage::empty(camera.width, camera.height);
    let starts: Vec<Vec3> = bundle.sphere_hits.iter().map(|&(_, p, _)| p).collect();
    let dirs: Vec<Vec3> = bundle
        .sphere_hits
        .iter()
        .map(|&(i, _, _)| bundle.dirs[i])
        .collect();
    let max_ts: Vec<f64> = starts
        .iter()
        .zip(&dirs)
        .map(|(&p, &r)| unit_sphere_exit(p, r))
        .collect();
    let order: Vec<usize> = (0..starts.len()).collect();
    let results = crate::par::parallel_chunks(&order, threads, |band| {
        let s: Vec<Vec3> = band.iter().map(|&i| starts[i]).collect();
        let d: Vec<Vec3> = band.iter().map(|&i| dirs[i]).collect();
        let m: Vec<f64> = band.iter().map(|&i| max_ts[i]).collect();
        sphere_trace_batch(|xs| models.sdf_eval_batch(z, xs), &s, &d, &m, cfg)
    });
    let mut evals = 0u64;
    for (k, &(idx, p, _)) in bundle.sphere_hits.iter().enumerate() {
        evals += results[k].evals as u64;
        if results[k].hit {
            let x = p + dirs[k] * results[k].t;
            img.mask[idx] = true;
            img.depth[idx] = camera.projective_depth(x);
        }
    }
    Ok((img, evals, bundle.sphere_hits.len() as u64))
}

// ---------------------------------------------------------------------------
// Normals and shading
// ---------------------------------------------------------------------------

/// Central-difference normals (6 field evaluations per point). Returns the
/// unit normal and a degeneracy flag; degenerate gradients fall back to
/// (0,0,1).
pub fn normals_batch(
    mut eval: impl FnMut(&[Vec3]) -> Vec<f64>,
    points: &[Vec3],
    h: f64,
) -> Vec<(Vec3, bool)> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut queries = Vec::with_capacity(n * 6);
    for &x in points {
        for axis in 0..3 {
            let mut a = x.to_array();
            a[axis] += h;
            queries.push(Vec3::from_array(a));
            a[axis] -= 2.0 * h;
            queries.push(Vec3::from_array(a));
        }
    }
    let vals = eval(&queries);
    points
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let base = i * 6;
            let g = Vec3 {
                x: vals[base] - vals[base + 1],
                y: vals[base + 2] - vals[base + 3],
                z: vals[base + 4] - vals[base + 5],
            };
            let norm = g.norm();
            if norm < 1e-12 {
                (Vec3 { x: 0.0, y: 0.0, z: 1.0 }, true)
            } else {
                (g / norm, false)
            }
        })
        .collect()
}

/// Blinn-Phong with a fixed headlight (light along the view direction);
/// background is white.
pub fn shade(
    depth: &DepthImage,
    normals: &[Option<Vec3>],
    view_dirs: &[Vec3],
    base_color: [f64; 3],
) -> Vec<u8> {
    const AMBIENT: f64 = 0.15;
    const DIFFUSE: f64 = 0.65;
    const SPECULAR: f64 = 0.25;
    const SHININESS: f64 = 32.0;
    let npix = depth.width * depth.height;
    assert_eq!(normals.len(), npix);
    assert_eq!(view_dirs.len(), npix);
    let mut rgb = vec![255u8; npix * 3];
    for i in 0..npix {
        if !depth.mask[i] {
            continue;
        }
        let Some(mut n) = normals[i] else {
            continue;
        };
        let l = -view_dirs[i]; // headlight: toward the camera
        if n.dot(l) < 0.0 {
            n = -n;
        }
        let ndotl = n.dot(l).max(0.0);
        // for a headlight the half vector equals the light direction
        let spec = ndotl.powf(SHININESS);
        let intensity = AMBIENT + DIFFUSE * ndotl;
        for c in 0..3 {
            let v = (base_color[c] * intensity + SPECULAR * spec).clamp(0.0, 1.0);
            rgb[i * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    rgb
}

/// DDF depth plus SDF normals, shaded. Returns (rgb, depth image, ddf evals).
pub fn render_shaded(
    models: &Models,
    z: &[f64],
    camera: &Camera,
    sigma_threshold: f64,
    threads: usize,
) -> Result<(Vec<u8>, DepthImage, u64)> {
    let (img, evals) = render_ddf(models, z, camera, sigma_threshold, threads)?;
    let bundle = generate_rays(camera)?;
    // surface points of masked pixels
    let mut pts = Vec::new();
    let mut idxs = Vec::new();
    for &(idx, p, _) in &bundle.sphere_hits {
        if img.mask[idx] {
            // reconstruct x from the stored projective depth
            let r = bundle.dirs[idx];
            let t = solve_ray_depth(camera, p, r, img.depth[idx]);
            pts.push(p + r * t);
            idxs.push(idx);
        }
    }
    let normals = normals_batch(|xs| models.sdf_eval_batch(z, xs), &pts, 1e-3);
    let mut per_pixel: Vec<Option<Vec3>> = vec![None; img.depth.len()];
    for (k, &idx) in idxs.iter().enumerate() {
        per_pixel[idx] = Some(normals[k].0);
    }
    let rgb = shade(&img, &per_pixel, &bundle.dirs, [0.75, 0.78, 0.85]);
    Ok((rgb, img, evals))
}

/// Ray parameter t (from point p along r) at which the projective depth
/// equals `lambda`; linear because lambda is affine along the ray.
fn solve_ray_depth(camera: &Camera, p: Vec3, r: Vec3, lambda: f64) -> f64 {
    let at_p = camera.projective_depth(p);
    let slope = camera.projective_depth(p + r) - at_p;
    if slope.abs() < 1e-15 {
        0.0
    } else {
        (lambda - at_p) / slope
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;

    fn sphere_field(radius: f64) -> impl Fn(Vec3) -> f64 {
        move |x: Vec3| x.norm() - radius
    }

    #[test]
    fn analytic_trace_hits_in_one_step() {
        let f = sphere_field(0.5);
        let res = sphere_trace(
            &f,
            vec3(0.0, 0.0, 1.0),
            vec3(0.0, 0.0, -1.0),
            2.0,
            &TraceConfig::analytic(),
        );
        assert!(res.hit);
        assert!((res.t - 0.5).abs() < 1e-9, "t = {}", res.t);
        assert_eq!(res.evals, 2); // start sample + landing sample
    }

    #[test]
    fn trace_miss_within_step_budget() {
        let f = sphere_field(0.5);
        let start = vec3(0.0, 0.9, 1.0).normalized();
        let res = sphere_trace(
            &f,
            start,
            vec3(0.0, 0.0, -1.0),
            unit_sphere_exit(start, vec3(0.0, 0.0, -1.0)),
            &TraceConfig::analytic(),
        );
        assert!(!res.hit);
        assert!(res.evals <= 50);
        assert!(res.evals >= 2);
    }

    #[test]
    fn truncated_trace_still_converges() {
        let f = |x: Vec3| (x.norm() - 0.5).clamp(-TAU, TAU);
        let res = sphere_trace(
            f,
            vec3(0.0, 0.0, 1.0),
            vec3(0.0, 0.0, -1.0),
            2.0,
            &TraceConfig::truncated(),
        );
        assert!(res.hit);
        assert!((res.t - 0.5).abs() < 1e-6, "t = {}", res.t);
        assert!(res.evals >= 5, "truncation forces short steps");
    }

    #[test]
    fn oracle_depth_center_pixel() {
        let oracle = crate::oracle::ShapeOracle::sphere(0.5).unwrap();
        let cam = Camera::look_at(
            vec3(0.0, 0.0, 2.0),
            Vec3::ZERO,
            vec3(0.0, 1.0, 0.0),
            60.0,
            65,
            65,
        )
        .unwrap();
        let img = render_oracle_depth(&oracle, &cam).unwrap();
        let center = 32 * 65 + 32;
        assert!(img.mask[center]);
        assert!((img.depth[center] - 1.5).abs() < 1e-9);
        // corners miss the unit sphere entirely
        assert!(!img.mask[0]);
        assert_eq!(img.depth[0], 0.0);
    }

    #[test]
    fn normals_of_analytic_sphere() {
        let f = sphere_field(0.5);
        let out = normals_batch(
            |xs| xs.iter().map(|&x| f(x)).collect(),
            &[vec3(0.0, 0.0, 0.5), vec3(0.3, 0.0, 0.4)],
            1e-3,
        );
        assert!((out[0].0 - vec3(0.0, 0.0, 1.0)).norm() < 1e-3);
        assert!(!out[0].1);
        assert!((out[1].0.norm() - 1.0).abs() < 1e-6);
        let expect = vec3(0.3, 0.0, 0.4).normalized();
        assert!((out[1].0 - expect).norm() < 1e-3);
    }

    #[test]
    fn degenerate_normal_flagged() {
        let out = normals_batch(|xs| vec![0.0; xs.len()], &[vec3(0.1, 0.2, 0.3)], 1e-3);
        assert!(out[0].1);
        assert_eq!(out[0].0, vec3(0.0, 0.0, 1.0));
    }

    #[test]
    fn shading_extremes() {
        let mut img = DepthImage::empty(2, 1);
        img.mask = vec![true, true];
        img.depth = vec![1.0, 1.0];
        let view = vec3(0.0, 0.0, -1.0);
        // facing the light vs grazing
        let normals = vec![Some(vec3(0.0, 0.0, 1.0)), Some(vec3(1.0, 0.0, 0.0))];
        let rgb = shade(&img, &normals, &[view, view], [1.0, 1.0, 1.0]);
        // facing: ambient + diffuse + specular saturates
        assert_eq!(rgb[0], 255);
        // grazing: ambient only
        let ambient = (0.15f64 * 255.0).round() as u8;
        assert_eq!(rgb[3], ambient);
    }

    #[test]
    fn shade_deterministic_within_process() {
        let mut img = DepthImage::empty(4, 4);
        for i in 0..16 {
            img.mask[i] = i % 3 != 0;
            img.depth[i] = 1.0 + i as f64 * 0.01;
        }
        let normals: Vec<Option<Vec3>> = (0..16)
            .map(|i| Some(vec3(0.1 * i as f64, 0.2, 1.0).normalized()))
            .collect();
        let views = vec![vec3(0.0, 0.0, -1.0); 16];
        let a = shade(&img, &normals, &views, [0.75, 0.78, 0.85]);
        let b = shade(&img, &normals, &views, [0.75, 0.78, 0.85]);
        assert_eq!(a, b);
    }
}
