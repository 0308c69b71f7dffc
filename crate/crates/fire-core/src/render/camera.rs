//! Pinhole camera: projection matrix, pose, and per-pixel ray generation.

use crate::config::KvFile;
use crate::error::{FireError, Result};
use crate::geom::{intersect_unit_sphere, vec3, Mat3, Vec3};
use std::path::Path;

/// Camera with a 3x4 projection `lambda [u,v,1]^T = P [x,1]^T`, plus the
/// pose it was built from. Rays go through pixel centers (i+0.5, j+0.5)
/// with v increasing downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub p: [[f64; 4]; 3],
    pub position: Vec3,
    /// world-to-camera rotation (rows: right, down, forward)
    pub rotation: Mat3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Perspective camera at `position` looking at `target`.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        if width == 0 || height == 0 {
            return Err(FireError::invalid("camera needs nonzero resolution"));
        }
        let forward = (target - position).normalized();
        if forward.norm() == 0.0 {
            return Err(FireError::invalid("camera position equals target"));
        }
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            // up parallel to view direction; pick any orthogonal axis
            right = forward.cross(vec3(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = forward.cross(vec3(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let f = (height as f64 / 2.0) / (fov_y_deg.to_radians() / 2.0).tan();
        let k = Mat3::from_rows(
            vec3(f, 0.0, width as f64 / 2.0),
            vec3(0.0, f, height as f64 / 2.0),
            vec3(0.0, 0.0, 1.0),
        );
        let kr = k.mul_mat(&rotation);
        let t = k.mul_vec(rotation.mul_vec(-position));
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            p[i][..3].copy_from_slice(&kr.m[i]);
            p[i][3] = t.comp(i);
        }
        Ok(Camera {
            p,
            position,
            rotation,
            width,
            height,
        })
    }

    fn m3(&self) -> Mat3 {
        Mat3 {
            m: [
                [self.p[0][0], self.p[0][1], self.p[0][2]],
                [self.p[1][0], self.p[1][1], self.p[1][2]],
                [self.p[2][0], self.p[2][1], self.p[2][2]],
            ],
        }
    }

    /// Projective depth: the third row of P applied to homogeneous x.
    pub fn projective_depth(&self, x: Vec3) -> f64 {
        self.p[2][0] * x.x + self.p[2][1] * x.y + self.p[2][2] * x.z + self.p[2][3]
    }

    /// Projects to (u, v, lambda).
    pub fn project(&self, x: Vec3) -> (f64, f64, f64) {
        let r0 = self.p[0][0] * x.x + self.p[0][1] * x.y + self.p[0][2] * x.z + self.p[0][3];
        let r1 = self.p[1][0] * x.x + self.p[1][1] * x.y + self.p[1][2] * x.z + self.p[1][3];
        let lam = self.projective_depth(x);
        (r0 / lam, r1 / lam, lam)
    }

    /// World-space unit ray through image coordinates (u, v).
    pub fn ray_through(&self, u: f64, v: f64) -> Result<(Vec3, Vec3)> {
        let m_inv = self
            .m3()
            .inverse()
            .ok_or_else(|| FireError::invalid("projection matrix is rank-deficient"))?;
        let dir = m_inv.mul_vec(vec3(u, v, 1.0)).normalized();
        Ok((self.position, dir))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut kv = KvFile::new();
        let s = kv.section_mut("camera");
        s.set("width", self.width);
        s.set("height", self.height);
        let flat: Vec<String> = self
            .p
            .iter()
            .flat_map(|row| row.iter().map(|v| format!("{v}")))
            .collect();
        s.set("p", flat.join(" "));
        s.set(
            "position",
            format!("{} {} {}", self.position.x, self.position.y, self.position.z),
        );
        let rot: Vec<String> = self
            .rotation
            .m
            .iter()
            .flat_map(|row| row.iter().map(|v| format!("{v}")))
            .collect();
        s.set("rotation", rot.join(" "));
        kv.save(path)
    }

    pub fn load(path: &Path) -> Result<Camera> {
        let kv = KvFile::load(path)?;
        let s = kv
            .section("camera")
            .ok_or_else(|| FireError::parse(path, "missing [camera] section"))?;
        let width = s
            .parse::<usize>("width")?
            .ok_or_else(|| FireError::parse(path, "missing width"))?;
        let height = s
            .parse::<usize>("height")?
            .ok_or_else(|| FireError::parse(path, "missing height"))?;
        let pf = s
            .parse_floats("p")?
            .ok_or_else(|| FireError::parse(path, "missing projection p"))?;
        if pf.len() != 12 {
            return Err(FireError::parse(path, "projection needs 12 values"));
        }
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            p[i].copy_from_slice(&pf[i * 4..(i + 1) * 4]);
        }
        let pos = s
            .parse_floats("position")?
            .ok_or_else(|| FireError::parse(path, "missing position"))?;
        if pos.len() != 3 {
            return Err(FireError::parse(path, "position needs 3 values"));
        }
        let rot = s
            .parse_floats("rotation")?
            .ok_or_else(|| FireError::parse(path, "missing rotation"))?;
        if rot.len() != 9 {
            return Err(FireError::parse(path, "rotation needs 9 values"));
        }
        let rotation = Mat3 {
            m: [
                [rot[0], rot[1], rot[2]],
                [rot[3], rot[4], rot[5]],
                [rot[6], rot[7], rot[8]],
            ],
        };
        let cam = Camera {
            p,
            position: vec3(pos[0], pos[1], pos[2]),
            rotation,
            width,
            height,
        };
        if cam.m3().inverse().is_none() {
            return Err(FireError::parse(path, "projection matrix has rank < 3"));
        }
        Ok(cam)
    }
}

/// Per-pixel rays with cached unit-sphere entries.
#[derive(Debug, Clone)]
pub struct RayBundle {
    pub width: usize,
    pub height: usize,
    pub origin: Vec3,
    pub dirs: Vec<Vec3>,
    /// (pixel index, entry point p with |p| = 1, entry parameter t)
    pub sphere_hits: Vec<(usize, Vec3, f64)>,
}

/// One unit ray per pixel center; directions unit-normalized; unit-sphere
/// intersections precomputed.
pub fn generate_rays(camera: &Camera) -> Result<RayBundle> {
    let m_inv = camera
        .m3()
        .inverse()
        .ok_or_else(|| FireError::invalid("projection matrix is rank-deficient"))?;
    let mut dirs = Vec::with_capacity(camera.width * camera.height);
    let mut sphere_hits = Vec::new();
    for j in 0..camera.height {
        for i in 0..camera.width {
            let u = i as f64 + 0.5;
            let v = j as f64 + 0.5;
            let dir = m_inv.mul_vec(vec3(u, v, 1.0)).normalized();
            let idx = j * camera.width + i;
            if let Some((t, p)) = intersect_unit_sphere(camera.position, dir) {
                sphere_hits.push((idx, p, t));
            }
            dirs.push(dir);
        }
    }
    Ok(RayBundle {
        width: camera.width,
        height: camera.height,
        origin: camera.position,
        dirs,
        sphere_hits,
    })
}
