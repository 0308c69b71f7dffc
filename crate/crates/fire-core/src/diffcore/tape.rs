//! Append-only computation record with eager forward evaluation and a
//! reverse sweep that fills adjoints.
//!
//! Shape rules are enforced with assertions: a mismatch is a construction
//! bug in the caller, not a runtime condition to recover from.

use super::kernels::{matmul_acc, matmul_at_b_acc, transpose};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul,
    /// Elementwise add, or bias broadcast when rhs is a single row.
    Add,
    Sub,
    /// Elementwise multiply, or column broadcast when one side is [B,1].
    Mul,
    Scale(f64),
    Offset,
    Relu,
    Sigmoid,
    /// Hard clamp to [-tau, tau]; unit gradient inside, zero outside.
    SoftClamp(f64),
    Sin,
    Cos,
    Abs,
    Sqrt,
    ConcatCols,
    ConcatRows,
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    /// Repeat a single row n times.
    TileRows(usize),
    Sum,
    Mean,
    /// Sum of absolute values.
    L1,
    /// Sum of squares.
    SumSq,
    /// Mean binary cross entropy against fixed targets; predictions are
    /// clamped to [1e-7, 1 - 1e-7] before the logs.
    Bce { targets: Vec<f64> },
    /// inputs: [plane (N x N x K), uv (B x 2) in [-1,1]^2]; output B x K.
    BilinearSample,
    /// Total variation of one plane: sum over forward-difference vectors
    /// (K channels) of their L2 norms, both axes. Output scalar.
    TvPlane,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    adjoint: Vec<f64>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].adjoint
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_adjoints(&mut self) {
        for n in &mut self.nodes {
            n.adjoint.iter_mut().for_each(|a| *a = 0.0);
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> NodeId {
        let requires_grad = match op {
            Op::Leaf => false, // overridden by leaf()
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        let adjoint = vec![0.0; value.len()];
        self.nodes.push(Node {
            op,
            inputs,
            value,
            adjoint,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf: adjoints flow into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, vec![], value);
        self.nodes[id.0].requires_grad = true;
        id
    }

    /// Constant leaf: no adjoint is ever propagated into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    /// A parameter participating in the forward pass with gradient flow
    /// severed (stop-gradient).
    pub fn leaf_frozen(&mut self, value: Tensor) -> NodeId {
        self.constant(value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, av.data(), m, k, bv.data(), n);
        self.push(Op::MatMul, vec![a.0, b.0], Tensor::new(vec![m, n], out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            Tensor::new(av.shape().to_vec(), data)
        } else {
            // bias broadcast: b has one row with matching column count
            assert_eq!(bv.rows(), 1, "add: incompatible shapes");
            assert_eq!(av.cols(), bv.cols(), "add: incompatible shapes");
            let cols = av.cols();
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (o, &x) in row.iter_mut().zip(bv.data()) {
                    *o += x;
                }
            }
            Tensor::new(av.shape().to_vec(), data)
        };
        self.push(Op::Add, vec![a.0, b.0], value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "sub: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Sub, vec![a.0, b.0], value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
            Tensor::new(av.shape().to_vec(), data)
        } else {
            // column broadcast: a is [B,1], b is [B,C]
            assert_eq!(av.cols(), 1, "mul: incompatible shapes");
            assert_eq!(av.rows(), bv.rows(), "mul: incompatible shapes");
            let cols = bv.cols();
            let mut data = bv.data().to_vec();
            for (i, row) in data.chunks_mut(cols).enumerate() {
                let s = av.data()[i];
                row.iter_mut().for_each(|o| *o *= s);
            }
            Tensor::new(bv.shape().to_vec(), data)
        };
        self.push(Op::Mul, vec![a.0, b.0], value)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| x * s).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Scale(s), vec![a.0], value)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| x + c).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Offset, vec![a.0], value)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(op, vec![a.0], value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid, stable_sigmoid)
    }

    pub fn softclamp(&mut self, a: NodeId, tau: f64) -> NodeId {
        self.unary(a, Op::SoftClamp(tau), move |x| x.clamp(-tau, tau))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin, f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos, f64::cos)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs, f64::abs)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt, f64::sqrt)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut col0 = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows(), rows, "concat_cols: row mismatch");
            let c = v.cols();
            for r in 0..rows {
                data[r * total + col0..r * total + col0 + c]
                    .copy_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
            col0 += c;
        }
        self.push(
            Op::ConcatCols,
            parts.iter().map(|p| p.0).collect(),
            Tensor::new(vec![rows, total], data),
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.nodes[parts[0].0].value.cols();
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(v.data());
        }
        self.push(
            Op::ConcatRows,
            parts.iter().map(|p| p.0).collect(),
            Tensor::new(vec![rows, cols], data),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start < end && end <= cols, "slice_cols out of range");
        let w = end - start;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w]
                .copy_from_slice(&av.data()[r * cols + start..r * cols + end]);
        }
        self.push(
            Op::SliceCols(start, end),
            vec![a.0],
            Tensor::new(vec![rows, w], data),
        )
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start < end && end <= rows, "slice_rows out of range");
        let data = av.data()[start * cols..end * cols].to_vec();
        self.push(
            Op::SliceRows(start, end),
            vec![a.0],
            Tensor::new(vec![end - start, cols], data),
        )
    }

    pub fn tile_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.rows(), 1, "tile_rows expects a single row");
        let cols = av.cols();
        let mut data = Vec::with_capacity(n * cols);
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        self.push(
            Op::TileRows(n),
            vec![a.0],
            Tensor::new(vec![n, cols], data),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum, vec![a.0], Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum();
        let m = s / v.len() as f64;
        self.push(Op::Mean, vec![a.0], Tensor::scalar(m))
    }

    /// Sum of absolute values.
    pub fn l1(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|x| x.abs()).sum();
        self.push(Op::L1, vec![a.0], Tensor::scalar(s))
    }

    /// Sum of squares.
    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|x| x * x).sum();
        self.push(Op::SumSq, vec![a.0], Tensor::scalar(s))
    }

    /// Mean binary cross entropy of predictions against fixed 0/1 targets.
    pub fn bce(&mut self, pred: NodeId, targets: &[f64]) -> NodeId {
        let v = &self.nodes[pred.0].value;
        assert_eq!(v.len(), targets.len(), "bce: target count mismatch");
        let n = targets.len() as f64;
        let mut s = 0.0;
        for (&p, &t) in v.data().iter().zip(targets) {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            s += -(1.0 - t) * (1.0 - pc).ln() - t * pc.ln();
        }
        self.push(
            Op::Bce {
                targets: targets.to_vec(),
            },
            vec![pred.0],
            Tensor::scalar(s / n),
        )
    }

    /// Bilinearly sample a (N x N x K) plane at uv locations in [-1,1]^2.
    ///
    /// uv.0 selects the row axis, uv.1 the column axis. Out-of-range
    /// coordinates clamp to the border; the uv gradient is zero along a
    /// clamped axis.
    pub fn bilinear_sample(&mut self, plane: NodeId, uv: NodeId) -> NodeId {
        let (pv, uvv) = (&self.nodes[plane.0].value, &self.nodes[uv.0].value);
        let (n, k) = plane_dims(pv);
        assert_eq!(uvv.cols(), 2, "bilinear_sample: uv must be B x 2");
        let rows = uvv.rows();
        let mut out = vec![0.0; rows * k];
        for b in 0..rows {
            let lookup = BilinearLookup::new(uvv.data()[2 * b], uvv.data()[2 * b + 1], n);
            lookup.gather(pv.data(), n, k, &mut out[b * k..(b + 1) * k]);
        }
        self.push(
            Op::BilinearSample,
            vec![plane.0, uv.0],
            Tensor::new(vec![rows, k], out),
        )
    }

    /// Total-variation contribution of one plane (see `Op::TvPlane`).
    pub fn tv_plane(&mut self, plane: NodeId) -> NodeId {
        let pv = &self.nodes[plane.0].value;
        let (n, k) = plane_dims(pv);
        let data = pv.data();
        let mut s = 0.0;
        let mut each = |i0: usize, i1: usize| {
            let mut acc = 0.0;
            for c in 0..k {
                let d = data[i1 * k + c] - data[i0 * k + c];
                acc += d * d;
            }
            s += acc.sqrt();
        };
        for r in 0..n - 1 {
            for c in 0..n {
                each(r * n + c, (r + 1) * n + c);
            }
        }
        for r in 0..n {
            for c in 0..n - 1 {
                each(r * n + c, r * n + c + 1);
            }
        }
        self.push(Op::TvPlane, vec![plane.0], Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar root. Adjoints accumulate across calls
    /// until [`Tape::zero_adjoints`].
    pub fn backward(&mut self, root: NodeId) {
        assert!(
            self.nodes[root.0].value.is_scalar(),
            "backward root must be scalar"
        );
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        scratch[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(adj) = scratch[id].take() else {
                continue;
            };
            self.propagate(id, &adj, &mut scratch);
            scratch[id] = Some(adj);
        }
        for (id, slot) in scratch.into_iter().enumerate() {
            if let Some(s) = slot {
                for (a, v) in self.nodes[id].adjoint.iter_mut().zip(&s) {
                    *a += v;
                }
            }
        }
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&self, id: usize, adj: &[f64], scratch: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[id];
        let input_val = |i: usize| &self.nodes[node.inputs[i]].value;
        macro_rules! slot {
            ($i:expr) => {{
                let idx = node.inputs[$i];
                let len = self.nodes[idx].value.len();
                scratch[idx].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (av, bv) = (input_val(0), input_val(1));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(node.inputs[0]) {
                    let bt = transpose(bv.data(), k, n);
                    matmul_acc(slot!(0), adj, m, n, &bt, k);
                }
                if self.wants(node.inputs[1]) {
                    matmul_at_b_acc(slot!(1), av.data(), m, k, adj, n);
                }
            }
            Op::Add => {
                let (av, bv) = (input_val(0), input_val(1));
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    for (o, &a) in da.iter_mut().zip(adj) {
                        *o += a;
                    }
                }
                if self.wants(node.inputs[1]) {
                    if av.shape() == bv.shape() {
                        let db = slot!(1);
                        for (o, &a) in db.iter_mut().zip(adj) {
                            *o += a;
                        }
                    } else {
                        let cols = bv.cols();
                        let db = slot!(1);
                        for row in adj.chunks(cols) {
                            for (o, &a) in db.iter_mut().zip(row) {
                                *o += a;
                            }
                        }
                    }
                }
            }
            Op::Sub => {
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    for (o, &a) in da.iter_mut().zip(adj) {
                        *o += a;
                    }
                }
                if self.wants(node.inputs[1]) {
                    let db = slot!(1);
                    for (o, &a) in db.iter_mut().zip(adj) {
                        *o -= a;
                    }
                }
            }
            Op::Mul => {
                let (av, bv) = (input_val(0), input_val(1));
                if av.shape() == bv.shape() {
                    if self.wants(node.inputs[0]) {
                        let da = slot!(0);
                        for ((o, &a), &b) in da.iter_mut().zip(adj).zip(bv.data()) {
                            *o += a * b;
                        }
                    }
                    if self.wants(node.inputs[1]) {
                        let db = slot!(1);
                        for ((o, &a), &x) in db.iter_mut().zip(adj).zip(av.data()) {
                            *o += a * x;
                        }
                    }
                } else {
                    let cols = bv.cols();
                    if self.wants(node.inputs[0]) {
                        let da = slot!(0);
                        for (i, row) in adj.chunks(cols).enumerate() {
                            let mut s = 0.0;
                            for (a, &b) in row.iter().zip(&bv.data()[i * cols..(i + 1) * cols]) {
                                s += a * b;
                            }
                            da[i] += s;
                        }
                    }
                    if self.wants(node.inputs[1]) {
                        let db = slot!(1);
                        for (i, row) in adj.chunks(cols).enumerate() {
                            let s = av.data()[i];
                            for (o, &a) in db[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                                *o += a * s;
                            }
                        }
                    }
                }
            }
            Op::Scale(s) => {
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    for (o, &a) in da.iter_mut().zip(adj) {
                        *o += a * s;
                    }
                }
            }
            Op::Offset => {
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    for (o, &a) in da.iter_mut().zip(adj) {
                        *o += a;
                    }
                }
            }
            Op::Relu => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for ((o, &a), &xv) in da.iter_mut().zip(adj).zip(x) {
                        if xv > 0.0 {
                            *o += a;
                        }
                    }
                }
            }
            Op::Sigmoid => {
                if self.wants(node.inputs[0]) {
                    let y = node.value.data();
                    let da = slot!(0);
                    for ((o, &a), &yv) in da.iter_mut().zip(adj).zip(y) {
                        *o += a * yv * (1.0 - yv);
                    }
                }
            }
            Op::SoftClamp(tau) => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for ((o, &a), &xv) in da.iter_mut().zip(adj).zip(x) {
                        if xv.abs() <= *tau {
                            *o += a;
                        }
                    }
                }
            }
            Op::Sin => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for ((o, &a), &xv) in da.iter_mut().zip(adj).zip(x) {
                        *o += a * xv.cos();
                    }
                }
            }
            Op::Cos => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for ((o, &a), &xv) in da.iter_mut().zip(adj).zip(x) {
                        *o -= a * xv.sin();
                    }
                }
            }
            Op::Abs => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for ((o, &a), &xv) in da.iter_mut().zip(adj).zip(x) {
                        *o += a * sign0(xv);
                    }
                }
            }
            Op::Sqrt => {
                if self.wants(node.inputs[0]) {
                    let y = node.value.data();
                    let da = slot!(0);
                    for ((o, &a), &yv) in da.iter_mut().zip(adj).zip(y) {
                        if yv > 0.0 {
                            *o += a * 0.5 / yv;
                        }
                    }
                }
            }
            Op::ConcatCols => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut col0 = 0;
                for (pi, &idx) in node.inputs.iter().enumerate() {
                    let c = self.nodes[idx].value.cols();
                    if self.wants(idx) {
                        let d = slot!(pi);
                        for r in 0..rows {
                            for j in 0..c {
                                d[r * c + j] += adj[r * total + col0 + j];
                            }
                        }
                    }
                    col0 += c;
                }
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for (pi, &idx) in node.inputs.iter().enumerate() {
                    let len = self.nodes[idx].value.len();
                    if self.wants(idx) {
                        let d = slot!(pi);
                        for (o, &a) in d.iter_mut().zip(&adj[offset..offset + len]) {
                            *o += a;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceCols(start, _end) => {
                if self.wants(node.inputs[0]) {
                    let cols = input_val(0).cols();
                    let w = node.value.cols();
                    let rows = node.value.rows();
                    let da = slot!(0);
                    for r in 0..rows {
                        for j in 0..w {
                            da[r * cols + start + j] += adj[r * w + j];
                        }
                    }
                }
            }
            Op::SliceRows(start, _end) => {
                if self.wants(node.inputs[0]) {
                    let cols = node.value.cols();
                    let da = slot!(0);
                    let offset = start * cols;
                    for (i, &a) in adj.iter().enumerate() {
                        da[offset + i] += a;
                    }
                }
            }
            Op::TileRows(n) => {
                if self.wants(node.inputs[0]) {
                    let cols = node.value.cols();
                    let da = slot!(0);
                    for r in 0..*n {
                        for j in 0..cols {
                            da[j] += adj[r * cols + j];
                        }
                    }
                }
            }
            Op::Sum => {
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    for o in da.iter_mut() {
                        *o += adj[0];
                    }
                }
            }
            Op::Mean => {
                if self.wants(node.inputs[0]) {
                    let da = slot!(0);
                    let s = adj[0] / da.len() as f64;
                    for o in da.iter_mut() {
                        *o += s;
                    }
                }
            }
            Op::L1 => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for (o, &xv) in da.iter_mut().zip(x) {
                        *o += adj[0] * sign0(xv);
                    }
                }
            }
            Op::SumSq => {
                if self.wants(node.inputs[0]) {
                    let x = input_val(0).data();
                    let da = slot!(0);
                    for (o, &xv) in da.iter_mut().zip(x) {
                        *o += adj[0] * 2.0 * xv;
                    }
                }
            }
            Op::Bce { targets } => {
                if self.wants(node.inputs[0]) {
                    let p = input_val(0).data();
                    let n = targets.len() as f64;
                    let da = slot!(0);
                    for ((o, &pv), &t) in da.iter_mut().zip(p).zip(targets) {
                        if pv > BCE_CLAMP && pv < 1.0 - BCE_CLAMP {
                            *o += adj[0] * (-t / pv + (1.0 - t) / (1.0 - pv)) / n;
                        }
                    }
                }
            }
            Op::BilinearSample => {
                let (pv, uvv) = (input_val(0), input_val(1));
                let (n, k) = plane_dims(pv);
                let rows = uvv.rows();
                let wants_plane = self.wants(node.inputs[0]);
                let wants_uv = self.wants(node.inputs[1]);
                for b in 0..rows {
                    let lookup = BilinearLookup::new(uvv.data()[2 * b], uvv.data()[2 * b + 1], n);
                    let out_adj = &adj[b * k..(b + 1) * k];
                    if wants_plane {
                        lookup.scatter(slot!(0), n, k, out_adj);
                    }
                    if wants_uv {
                        let (du, dv) = lookup.uv_grad(pv.data(), n, k, out_adj);
                        let duv = slot!(1);
                        duv[2 * b] += du;
                        duv[2 * b + 1] += dv;
                    }
                }
            }
            Op::TvPlane => {
                if self.wants(node.inputs[0]) {
                    let pv = input_val(0);
                    let (n, k) = plane_dims(pv);
                    let data = pv.data();
                    let da = slot!(0);
                    let mut each = |i0: usize, i1: usize| {
                        let mut acc = 0.0;
                        for c in 0..k {
                            let d = data[i1 * k + c] - data[i0 * k + c];
                            acc += d * d;
                        }
                        let norm = acc.sqrt();
                        if norm > 0.0 {
                            let s = adj[0] / norm;
                            for c in 0..k {
                                let d = data[i1 * k + c] - data[i0 * k + c];
                                da[i1 * k + c] += s * d;
                                da[i0 * k + c] -= s * d;
                            }
                        }
                    };
                    for r in 0..n - 1 {
                        for c in 0..n {
                            each(r * n + c, (r + 1) * n + c);
                        }
                    }
                    for r in 0..n {
                        for c in 0..n - 1 {
                            each(r * n + c, r * n + c + 1);
                        }
                    }
                }
            }
        }
    }
}

fn plane_dims(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "plane must be N x N x K");
    assert_eq!(s[0], s[1], "plane must be square");
    assert!(s[0] >= 2, "plane resolution must be at least 2");
    (s[0], s[2])
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Accumulates one bilinear lookup into `out` (length K); shares the exact
/// interpolation arithmetic with the tape op.
pub fn bilinear_gather(plane: &[f64], n: usize, k: usize, u: f64, v: f64, out: &mut [f64]) {
    BilinearLookup::new(u, v, n).gather(plane, n, k, out);
}

/// Shared bilinear interpolation bookkeeping for forward, plane scatter and
/// uv gradients.
struct BilinearLookup {
    r0: usize,
    c0: usize,
    fr: f64,
    fc: f64,
    /// d(grid row coord)/d(uv.0); zero when clamped to the border.
    dr: f64,
    dc: f64,
}

impl BilinearLookup {
    fn new(u: f64, v: f64, n: usize) -> BilinearLookup {
        let scale = 0.5 * (n as f64 - 1.0);
        let map = |t: f64| -> (f64, f64) {
            let g = (t + 1.0) * scale;
            if g < 0.0 {
                (0.0, 0.0)
            } else if g > n as f64 - 1.0 {
                (n as f64 - 1.0, 0.0)
            } else {
                (g, scale)
            }
        };
        let (gr, dr) = map(u);
        let (gc, dc) = map(v);
        let r0 = (gr.floor() as usize).min(n - 2);
        let c0 = (gc.floor() as usize).min(n - 2);
        BilinearLookup {
            r0,
            c0,
            fr: gr - r0 as f64,
            fc: gc - c0 as f64,
            dr,
            dc,
        }
    }

    fn weights(&self) -> [(usize, usize, f64); 4] {
        let (fr, fc) = (self.fr, self.fc);
        [
            (self.r0, self.c0, (1.0 - fr) * (1.0 - fc)),
            (self.r0, self.c0 + 1, (1.0 - fr) * fc),
            (self.r0 + 1, self.c0, fr * (1.0 - fc)),
            (self.r0 + 1, self.c0 + 1, fr * fc),
        ]
    }

    fn gather(&self, plane: &[f64], n: usize, k: usize, out: &mut [f64]) {
        for (r, c, w) in self.weights() {
            let base = (r * n + c) * k;
            for (o, &p) in out.iter_mut().zip(&plane[base..base + k]) {
                *o += w * p;
            }
        }
    }

    fn scatter(&self, plane_adj: &mut [f64], n: usize, k: usize, out_adj: &[f64]) {
        for (r, c, w) in self.weights() {
            let base = (r * n + c) * k;
            for (p, &a) in plane_adj[base..base + k].iter_mut().zip(out_adj) {
                *p += w * a;
            }
        }
    }

    fn uv_grad(&self, plane: &[f64], n: usize, k: usize, out_adj: &[f64]) -> (f64, f64) {
        let at = |r: usize, c: usize, ch: usize| plane[(r * n + c) * k + ch];
        let (fr, fc) = (self.fr, self.fc);
        let (mut du, mut dv) = (0.0, 0.0);
        for (ch, &a) in out_adj.iter().enumerate() {
            let v00 = at(self.r0, self.c0, ch);
            let v01 = at(self.r0, self.c0 + 1, ch);
            let v10 = at(self.r0 + 1, self.c0, ch);
            let v11 = at(self.r0 + 1, self.c0 + 1, ch);
            let d_fr = -(1.0 - fc) * v00 - fc * v01 + (1.0 - fc) * v10 + fc * v11;
            let d_fc = -(1.0 - fr) * v00 + (1.0 - fr) * v01 - fr * v10 + fr * v11;
            du += a * d_fr;
            dv += a * d_fc;
        }
        (du * self.dr, dv * self.dc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.leaf(Tensor::scalar(2.0));
        let z = tape.mul(x, y);
        tape.backward(z);
        assert_eq!(tape.adjoint(x), &[2.0]);
        assert_eq!(tape.adjoint(y), &[3.0]);
    }

    #[test]
    fn l1_sign_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]));
        let l = tape.l1(x);
        assert_eq!(tape.value(l).item(), 3.0);
        tape.backward(l);
        assert_eq!(tape.adjoint(x), &[-1.0, 1.0]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![-2.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0]);
        let s = tape.sigmoid(x);
        assert!((tape.value(s).data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_closed_form() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.5));
        let l = tape.bce(p, &[1.0]);
        assert!((tape.value(l).item() - 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0));
        let y = tape.sum_sq(x);
        tape.backward(y);
        tape.backward(y);
        assert_eq!(tape.adjoint(x), &[16.0]); // 2 * (2x)
        tape.zero_adjoints();
        tape.backward(y);
        assert_eq!(tape.adjoint(x), &[8.0]);
    }

    #[test]
    fn frozen_leaf_receives_no_adjoint() {
        let mut tape = Tape::new();
        let x = tape.leaf_frozen(Tensor::scalar(3.0));
        let y = tape.leaf(Tensor::scalar(2.0));
        let z = tape.mul(x, y);
        tape.backward(z);
        assert_eq!(tape.adjoint(x), &[0.0]);
        assert_eq!(tape.adjoint(y), &[3.0]);
    }

    #[test]
    fn bilinear_center_of_2x2() {
        let mut tape = Tape::new();
        let plane = tape.leaf(Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]));
        let uv = tape.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]));
        let s = tape.bilinear_sample(plane, uv);
        assert!((tape.value(s).data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn bilinear_exact_node() {
        let mut tape = Tape::new();
        let plane = tape.leaf(Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]));
        let uv = tape.constant(Tensor::new(vec![1, 2], vec![-1.0, -1.0]));
        let s = tape.bilinear_sample(plane, uv);
        assert_eq!(tape.value(s).data()[0], 0.0);
        tape.backward(s);
        // full weight on the queried node, nothing elsewhere
        assert_eq!(tape.adjoint(plane), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tv_plane_hand_example() {
        // N=2, K=1, values [[0,1],[0,1]]: row-axis diffs 0,0; col diffs 1,1.
        let mut tape = Tape::new();
        let plane = tape.leaf(Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]));
        let tv = tape.tv_plane(plane);
        assert!((tape.value(tv).item() - 2.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        tape.matmul(a, b);
    }

    #[test]
    #[should_panic(expected = "backward root must be scalar")]
    fn non_scalar_root_panics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        tape.backward(a);
    }
}
