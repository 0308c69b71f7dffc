//! The SDF and DDF networks.

use super::planes::{features_tape, FeaturePlaneSet, PlaneBinding, DDF_PAIRS, SDF_PAIRS};
use super::{posenc_tape, positional_encode, FieldConfig};
use crate::diffcore::{matmul_acc, NodeId, Parameter, Tape, Tensor};
use crate::geom::Vec3;
use crate::oracle::TAU;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Fully-connected layer; weight is [in, out] row-major, bias [1, out].
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    fn init(
        name: &str,
        fan_in: usize,
        fan_out: usize,
        scale: f64,
        rng: &mut ChaCha12Rng,
    ) -> Dense {
        // Kaiming-style uniform fan-in init
        let bound = (6.0 / fan_in as f64).sqrt() * scale;
        let data = (0..fan_in * fan_out)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        Dense {
            w: Parameter::new(format!("{name}_w"), Tensor::new(vec![fan_in, fan_out], data)),
            b: Parameter::new(format!("{name}_b"), Tensor::zeros(vec![1, fan_out])),
        }
    }

    fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    /// `input (rows x in) . W + b`, appended-bias form.
    fn forward_raw(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(self.b.value.data());
        }
        matmul_acc(&mut out, input, rows, din, self.w.value.data(), dout);
        out
    }

    fn bind(&self, tape: &mut Tape, frozen: bool) -> DenseBinding {
        let mut leaf = |p: &Parameter| {
            if frozen {
                tape.leaf_frozen(p.value.clone())
            } else {
                tape.leaf(p.value.clone())
            }
        };
        DenseBinding {
            w: leaf(&self.w),
            b: leaf(&self.b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseBinding {
    pub w: NodeId,
    pub b: NodeId,
}

impl DenseBinding {
    fn forward(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let mm = tape.matmul(input, self.w);
        tape.add(mm, self.b)
    }
}

/// SDF network: one block with 2 hidden layers of `sdf_hidden`, output
/// truncated to [-TAU, TAU].
#[derive(Debug, Clone)]
pub struct SdfModel {
    pub l1: Dense,
    pub l2: Dense,
    pub out: Dense,
}

impl SdfModel {
    pub fn init(cfg: &FieldConfig, rng: &mut ChaCha12Rng) -> SdfModel {
        let din = cfg.sdf_input_dim();
        let h = cfg.sdf_hidden;
        SdfModel {
            l1: Dense::init("sdf_l1", din, h, 1.0, rng),
            l2: Dense::init("sdf_l2", h, h, 1.0, rng),
            // small final layer keeps the initial field near zero
            out: Dense::init("sdf_out", h, 1, 0.1, rng),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.l1.w, &self.l1.b, &self.l2.w, &self.l2.b, &self.out.w, &self.out.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.l1.w,
            &mut self.l1.b,
            &mut self.l2.w,
            &mut self.l2.b,
            &mut self.out.w,
            &mut self.out.b,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, frozen: bool) -> SdfBinding {
        SdfBinding {
            l1: self.l1.bind(tape, frozen),
            l2: self.l2.bind(tape, frozen),
            out: self.out.bind(tape, frozen),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdfBinding {
    pub l1: DenseBinding,
    pub l2: DenseBinding,
    pub out: DenseBinding,
}

/// DDF network: 3 blocks, each one hidden layer of `ddf_hidden`, with the
/// encoded input concatenated into every block; distance head is linear,
/// hit head is a sigmoid.
#[derive(Debug, Clone)]
pub struct DdfModel {
    pub b1: Dense,
    pub b2: Dense,
    pub b3: Dense,
    pub head_d: Dense,
    pub head_sigma: Dense,
}

impl DdfModel {
    pub fn init(cfg: &FieldConfig, rng: &mut ChaCha12Rng) -> DdfModel {
        let din = cfg.ddf_input_dim();
        let h = cfg.ddf_hidden;
        DdfModel {
            b1: Dense::init("ddf_b1", din, h, 1.0, rng),
            b2: Dense::init("ddf_b2", h + din, h, 1.0, rng),
            b3: Dense::init("ddf_b3", h + din, h, 1.0, rng),
            head_d: Dense::init("ddf_head_d", h, 1, 1.0, rng),
            head_sigma: Dense::init("ddf_head_sigma", h, 1, 1.0, rng),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.b1.w,
            &self.b1.b,
            &self.b2.w,
            &self.b2.b,
            &self.b3.w,
            &self.b3.b,
            &self.head_d.w,
            &self.head_d.b,
            &self.head_sigma.w,
            &self.head_sigma.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.b1.w,
            &mut self.b1.b,
            &mut self.b2.w,
            &mut self.b2.b,
            &mut self.b3.w,
            &mut self.b3.b,
            &mut self.head_d.w,
            &mut self.head_d.b,
            &mut self.head_sigma.w,
            &mut self.head_sigma.b,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, frozen: bool) -> DdfBinding {
        DdfBinding {
            b1: self.b1.bind(tape, frozen),
            b2: self.b2.bind(tape, frozen),
            b3: self.b3.bind(tape, frozen),
            head_d: self.head_d.bind(tape, frozen),
            head_sigma: self.head_sigma.bind(tape, frozen),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DdfBinding {
    pub b1: DenseBinding,
    pub b2: DenseBinding,
    pub b3: DenseBinding,
    pub head_d: DenseBinding,
    pub head_sigma: DenseBinding,
}

/// Everything learned per shape class: feature planes and both networks.
/// Per-shape latent codes live with the trainer.
#[derive(Debug, Clone)]
pub struct Models {
    pub config: FieldConfig,
    pub planes: FeaturePlaneSet,
    pub sdf: SdfModel,
    pub ddf: DdfModel,
}

impl Models {
    pub fn init(config: FieldConfig, rng: &mut ChaCha12Rng) -> Models {
        let planes = FeaturePlaneSet::init(config.plane_resolution, config.feature_dim, rng);
        let sdf = SdfModel::init(&config, rng);
        let ddf = DdfModel::init(&config, rng);
        Models {
            config,
            planes,
            sdf,
            ddf,
        }
    }

    /// Deterministic parameter order shared by checkpoints and optimizers.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        out.extend(self.planes.sdf_planes.iter());
        out.extend(self.planes.ddf_planes.iter());
        out.extend(self.sdf.params());
        out.extend(self.ddf.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        out.extend(self.planes.sdf_planes.iter_mut());
        out.extend(self.planes.ddf_planes.iter_mut());
        out.extend(self.sdf.params_mut());
        out.extend(self.ddf.params_mut());
        out
    }

    /// Batched raw SDF evaluation (no tape). `z` has length `latent_dim`.
    pub fn sdf_eval_batch(&self, z: &[f64], xs: &[Vec3]) -> Vec<f64> {
        assert_eq!(z.len(), self.config.latent_dim);
        let rows = xs.len();
        if rows == 0 {
            return Vec::new();
        }
        let din = self.config.sdf_input_dim();
        let mut input = Vec::with_capacity(rows * din);
        for x in xs {
            positional_encode(&x.to_array(), self.config.n_freq, &mut input);
            input.extend_from_slice(z);
            let coords = x.to_array();
            for (plane, &(a, b)) in self.planes.sdf_planes.iter().zip(&SDF_PAIRS) {
                sample_plane(plane, coords[a], coords[b], &mut input);
            }
        }
        debug_assert_eq!(input.len(), rows * din);
        let mut h = self.sdf.l1.forward_raw(&input, rows);
        relu_inplace(&mut h);
        let mut h2 = self.sdf.l2.forward_raw(&h, rows);
        relu_inplace(&mut h2);
        let mut s = self.sdf.out.forward_raw(&h2, rows);
        for v in &mut s {
            *v = v.clamp(-TAU, TAU);
        }
        s
    }

    pub fn sdf_eval(&self, z: &[f64], x: Vec3) -> f64 {
        self.sdf_eval_batch(z, &[x])[0]
    }

    /// Batched raw DDF evaluation; returns (distances, hit probabilities).
    pub fn ddf_eval_batch(&self, z: &[f64], ps: &[Vec3], rs: &[Vec3]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(ps.len(), rs.len());
        assert_eq!(z.len(), self.config.latent_dim);
        let rows = ps.len();
        if rows == 0 {
            return (Vec::new(), Vec::new());
        }
        let din = self.config.ddf_input_dim();
        let mut input = Vec::with_capacity(rows * din);
        for (p, r) in ps.iter().zip(rs) {
            let pr = [p.x, p.y, p.z, r.x, r.y, r.z];
            positional_encode(&pr, self.config.n_freq, &mut input);
            input.extend_from_slice(z);
            for (plane, &(a, b)) in self.planes.ddf_planes.iter().zip(&DDF_PAIRS) {
                sample_plane(plane, pr[a], pr[b], &mut input);
            }
        }
        debug_assert_eq!(input.len(), rows * din);
        let h = self.ddf.b1.forward_raw(&input, rows);
        let h = relu(h);
        let h = self.ddf.b2.forward_raw(&concat_rows_wide(&h, &input, rows), rows);
        let h = relu(h);
        let h = self.ddf.b3.forward_raw(&concat_rows_wide(&h, &input, rows), rows);
        let h = relu(h);
        let d = self.ddf.head_d.forward_raw(&h, rows);
        let mut sigma = self.ddf.head_sigma.forward_raw(&h, rows);
        for v in &mut sigma {
            *v = crate::diffcore::stable_sigmoid(*v);
        }
        (d, sigma)
    }

    pub fn ddf_eval(&self, z: &[f64], p: Vec3, r: Vec3) -> (f64, f64) {
        let (d, s) = self.ddf_eval_batch(z, &[p], &[r]);
        (d[0], s[0])
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    relu_inplace(&mut v);
    v
}

/// Row-wise [h | input] concatenation.
fn concat_rows_wide(h: &[f64], input: &[f64], rows: usize) -> Vec<f64> {
    let hc = h.len() / rows;
    let ic = input.len() / rows;
    let mut out = Vec::with_capacity(rows * (hc + ic));
    for r in 0..rows {
        out.extend_from_slice(&h[r * hc..(r + 1) * hc]);
        out.extend_from_slice(&input[r * ic..(r + 1) * ic]);
    }
    out
}

fn sample_plane(plane: &Parameter, a: f64, b: f64, out: &mut Vec<f64>) {
    let shape = plane.value.shape();
    let (n, k) = (shape[0], shape[2]);
    let start = out.len();
    out.resize(start + k, 0.0);
    crate::diffcore::bilinear_gather(plane.value.data(), n, k, a, b, &mut out[start..]);
}

/// Tape-mode SDF forward: differentiable wrt parameters, planes, z and x.
pub fn sdf_forward_tape(
    tape: &mut Tape,
    bind: &SdfBinding,
    planes: &PlaneBinding,
    z: NodeId,
    x: NodeId,
    n_freq: usize,
) -> NodeId {
    let enc = posenc_tape(tape, x, n_freq);
    let feat = features_tape(tape, &planes.sdf, &SDF_PAIRS, x);
    let input = tape.concat_cols(&[enc, z, feat]);
    let h = bind.l1.forward(tape, input);
    let h = tape.relu(h);
    let h = bind.l2.forward(tape, h);
    let h = tape.relu(h);
    let s = bind.out.forward(tape, h);
    tape.softclamp(s, TAU)
}

/// Tape-mode DDF forward over a [B,6] (p,r) node; returns (d, sigma) nodes.
pub fn ddf_forward_tape(
    tape: &mut Tape,
    bind: &DdfBinding,
    planes: &PlaneBinding,
    z: NodeId,
    pr: NodeId,
    n_freq: usize,
) -> (NodeId, NodeId) {
    let enc = posenc_tape(tape, pr, n_freq);
    let feat = features_tape(tape, &planes.ddf, &DDF_PAIRS, pr);
    let input = tape.concat_cols(&[enc, z, feat]);
    let h = bind.b1.forward(tape, input);
    let h = tape.relu(h);
    let h = tape.concat_cols(&[h, input]);
    let h = bind.b2.forward(tape, h);
    let h = tape.relu(h);
    let h = tape.concat_cols(&[h, input]);
    let h = bind.b3.forward(tape, h);
    let h = tape.relu(h);
    let d = bind.head_d.forward(tape, h);
    let sig = bind.head_sigma.forward(tape, h);
    (d, tape.sigmoid(sig))
}
