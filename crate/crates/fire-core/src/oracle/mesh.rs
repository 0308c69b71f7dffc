//! Triangle meshes with a small BVH for closest-point and ray queries,
//! plus ASCII OBJ input/output (v/f lines only).

use crate::error::{FireError, Result};
use crate::geom::{vec3, Vec3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

const LEAF_SIZE: usize = 8;

/// Fixed jitter directions for the inside/outside parity vote.
const PARITY_DIRS: [Vec3; 3] = [
    vec3(0.577_215_664_9, 0.618_033_988_7, 0.533_905_932_7),
    vec3(-0.707_106_781_2, 0.301_029_995_7, 0.641_421_356_2),
    vec3(0.271_828_182_8, -0.314_159_265_4, 0.909_090_909_1),
];

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    bvh: Bvh,
    cumulative_area: Vec<f64>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<TriMesh> {
        for t in &triangles {
            for &i in t {
                if i as usize >= vertices.len() {
                    return Err(FireError::invalid(format!(
                        "triangle index {i} out of range ({} vertices)",
                        vertices.len()
                    )));
                }
            }
        }
        for v in &vertices {
            if !v.is_finite() {
                return Err(FireError::invalid("non-finite mesh vertex"));
            }
        }
        let bvh = Bvh::build(&vertices, &triangles);
        let mut cumulative_area = Vec::with_capacity(triangles.len());
        let mut acc = 0.0;
        for t in &triangles {
            acc += triangle_area(
                vertices[t[0] as usize],
                vertices[t[1] as usize],
                vertices[t[2] as usize],
            );
            cumulative_area.push(acc);
        }
        Ok(TriMesh {
            vertices,
            triangles,
            bvh,
            cumulative_area,
        })
    }

    pub fn tri_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        *self.cumulative_area.last().unwrap_or(&0.0)
    }

    fn tri(&self, i: usize) -> (Vec3, Vec3, Vec3) {
        let t = self.triangles[i];
        (
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        )
    }

    /// Unsigned distance to the closest triangle.
    pub fn distance(&self, x: Vec3) -> f64 {
        self.bvh.closest_dist_sq(self, x).sqrt()
    }

    /// Parity vote with three fixed jittered rays.
    pub fn is_inside(&self, x: Vec3) -> bool {
        let mut inside_votes = 0;
        for d in PARITY_DIRS {
            let crossings = self.bvh.count_crossings(self, x, d.normalized());
            if crossings % 2 == 1 {
                inside_votes += 1;
            }
        }
        inside_votes >= 2
    }

    /// Nearest ray intersection parameter, if any.
    pub fn ray_nearest(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        self.bvh.ray_nearest(self, origin, dir)
    }

    /// Area-weighted uniform surface sample.
    pub fn sample_surface(&self, rng: &mut ChaCha12Rng) -> Vec3 {
        let total = self.total_area();
        let pick = rng.gen::<f64>() * total;
        let idx = match self
            .cumulative_area
            .binary_search_by(|a| a.partial_cmp(&pick).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.min(self.triangles.len() - 1),
        };
        let (a, b, c) = self.tri(idx);
        let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        a + (b - a) * u + (c - a) * v
    }

    pub fn load_obj(path: &Path) -> Result<TriMesh> {
        let file = std::fs::File::open(path).map_err(|e| FireError::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| FireError::io(path, e))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let mut coord = || -> Result<f64> {
                        parts
                            .next()
                            .ok_or_else(|| {
                                FireError::parse(path, format!("line {}: short vertex", lineno + 1))
                            })?
                            .parse::<f64>()
                            .map_err(|e| {
                                FireError::parse(path, format!("line {}: {e}", lineno + 1))
                            })
                    };
                    let (x, y, z) = (coord()?, coord()?, coord()?);
                    vertices.push(vec3(x, y, z));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in parts {
                        let lead = tok.split('/').next().unwrap_or("");
                        let i: i64 = lead.parse().map_err(|e| {
                            FireError::parse(path, format!("line {}: {e}", lineno + 1))
                        })?;
                        if i < 1 {
                            return Err(FireError::parse(
                                path,
                                format!("line {}: only positive indices supported", lineno + 1),
                            ));
                        }
                        idx.push((i - 1) as u32);
                    }
                    if idx.len() < 3 {
                        return Err(FireError::parse(
                            path,
                            format!("line {}: face needs 3+ vertices", lineno + 1),
                        ));
                    }
                    // fan-triangulate polygons
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, triangles)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| FireError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            for v in &self.vertices {
                writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
            }
            for t in &self.triangles {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
            w.flush()
        };
        emit().map_err(|e| FireError::io(path, e))
    }
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(c - a).norm()
}

/// Squared distance from a point to a triangle (Ericson, Real-Time
/// Collision Detection 5.1.5).
fn point_triangle_dist_sq(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_sq();
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_sq();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_sq();
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_sq();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_sq();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_sq();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm_sq()
}

/// Moller-Trumbore; returns t for intersections with t > eps.
fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t > 1e-12 {
        Some(t)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Aabb {
        Aabb {
            min: vec3(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: vec3(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.min = vec3(self.min.x.min(p.x), self.min.y.min(p.y), self.min.z.min(p.z));
        self.max = vec3(self.max.x.max(p.x), self.max.y.max(p.y), self.max.z.max(p.z));
    }

    fn dist_sq(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = p.comp(i);
            let lo = self.min.comp(i);
            let hi = self.max.comp(i);
            let e = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    fn ray_hits(&self, origin: Vec3, inv_dir: Vec3) -> bool {
        let mut tmin = 0.0f64;
        let mut tmax = f64::INFINITY;
        for i in 0..3 {
            let t0 = (self.min.comp(i) - origin.comp(i)) * inv_dir.comp(i);
            let t1 = (self.max.comp(i) - origin.comp(i)) * inv_dir.comp(i);
            let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf {
        bounds: Aabb,
        tris: Vec<u32>,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    root: usize,
}

impl Bvh {
    fn build(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Bvh {
        let mut nodes = Vec::new();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| {
                (vertices[t[0] as usize] + vertices[t[1] as usize] + vertices[t[2] as usize])
                    / 3.0
            })
            .collect();
        let root = if triangles.is_empty() {
            nodes.push(BvhNode::Leaf {
                bounds: Aabb::empty(),
                tris: vec![],
            });
            0
        } else {
            Self::build_rec(vertices, triangles, &centroids, &mut order[..], &mut nodes)
        };
        Bvh { nodes, root }
    }

    fn build_rec(
        vertices: &[Vec3],
        triangles: &[[u32; 3]],
        centroids: &[Vec3],
        order: &mut [u32],
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        for &ti in order.iter() {
            for &vi in &triangles[ti as usize] {
                bounds.grow(vertices[vi as usize]);
            }
        }
        if order.len() <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf {
                bounds,
                tris: order.to_vec(),
            });
            return nodes.len() - 1;
        }
        // split on the longest centroid axis at the median
        let mut cb = Aabb::empty();
        for &ti in order.iter() {
            cb.grow(centroids[ti as usize]);
        }
        let ext = cb.max - cb.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize]
                .comp(axis)
                .partial_cmp(&centroids[b as usize].comp(axis))
                .unwrap()
        });
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_rec(vertices, triangles, centroids, lo, nodes);
        let right = Self::build_rec(vertices, triangles, centroids, hi, nodes);
        nodes.push(BvhNode::Inner {
            bounds,
            left,
            right,
        });
        nodes.len() - 1
    }

    fn closest_dist_sq(&self, mesh: &TriMesh, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.closest_rec(mesh, p, self.root, &mut best);
        best
    }

    fn closest_rec(&self, mesh: &TriMesh, p: Vec3, node: usize, best: &mut f64) {
        match &self.nodes[node] {
            BvhNode::Leaf { bounds, tris } => {
                if bounds.dist_sq(p) >= *best {
                    return;
                }
                for &ti in tris {
                    let (a, b, c) = mesh.tri(ti as usize);
                    let d = point_triangle_dist_sq(p, a, b, c);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            BvhNode::Inner {
                bounds,
                left,
                right,
            } => {
                if bounds.dist_sq(p) >= *best {
                    return;
                }
                // descend nearer child first
                let dl = self.node_bounds(*left).dist_sq(p);
                let dr = self.node_bounds(*right).dist_sq(p);
                if dl <= dr {
                    self.closest_rec(mesh, p, *left, best);
                    self.closest_rec(mesh, p, *right, best);
                } else {
                    self.closest_rec(mesh, p, *right, best);
                    self.closest_rec(mesh, p, *left, best);
                }
            }
        }
    }

    fn node_bounds(&self, node: usize) -> &Aabb {
        match &self.nodes[node] {
            BvhNode::Leaf { bounds, .. } => bounds,
            BvhNode::Inner { bounds, .. } => bounds,
        }
    }

    fn ray_nearest(&self, mesh: &TriMesh, origin: Vec3, dir: Vec3) -> Option<f64> {
        let inv = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best = None;
        self.ray_rec(mesh, origin, dir, inv, self.root, &mut best);
        best
    }

    fn ray_rec(
        &self,
        mesh: &TriMesh,
        origin: Vec3,
        dir: Vec3,
        inv: Vec3,
        node: usize,
        best: &mut Option<f64>,
    ) {
        match &self.nodes[node] {
            BvhNode::Leaf { bounds, tris } => {
                if !bounds.ray_hits(origin, inv) {
                    return;
                }
                for &ti in tris {
                    let (a, b, c) = mesh.tri(ti as usize);
                    if let Some(t) = ray_triangle(origin, dir, a, b, c) {
                        if best.map_or(true, |cur| t < cur) {
                            *best = Some(t);
                        }
                    }
                }
            }
            BvhNode::Inner {
                bounds,
                left,
                right,
            } => {
                if !bounds.ray_hits(origin, inv) {
                    return;
                }
                self.ray_rec(mesh, origin, dir, inv, *left, best);
                self.ray_rec(mesh, origin, dir, inv, *right, best);
            }
        }
    }

    fn count_crossings(&self, mesh: &TriMesh, origin: Vec3, dir: Vec3) -> usize {
        let inv = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut count = 0;
        self.count_rec(mesh, origin, dir, inv, self.root, &mut count);
        count
    }

    fn count_rec(
        &self,
        mesh: &TriMesh,
        origin: Vec3,
        dir: Vec3,
        inv: Vec3,
        node: usize,
        count: &mut usize,
    ) {
        match &self.nodes[node] {
            BvhNode::Leaf { bounds, tris } => {
                if !bounds.ray_hits(origin, inv) {
                    return;
                }
                for &ti in tris {
                    let (a, b, c) = mesh.tri(ti as usize);
                    if ray_triangle(origin, dir, a, b, c).is_some() {
                        *count += 1;
                    }
                }
            }
            BvhNode::Inner {
                bounds,
                left,
                right,
            } => {
                if !bounds.ray_hits(origin, inv) {
                    return;
                }
                self.count_rec(mesh, origin, dir, inv, *left, count);
                self.count_rec(mesh, origin, dir, inv, *right, count);
            }
        }
    }
}

/// Subdivided icosahedron projected onto a sphere of the given radius.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| vec3(x, y, z).normalized() * radius)
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5)
                        .normalized()
                        * radius;
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces).expect("icosphere construction")
}
