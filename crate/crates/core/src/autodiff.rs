//! Minimal reverse-mode automatic differentiation over real 2-D tensors.
//!
//! A [`Tape`] records primitive applications in execution order (immediate
//! mode: values are computed as nodes are built). [`Tape::backward`] walks the
//! record in reverse and accumulates exact derivatives into every tensor that
//! requires gradients. Complex quantities are carried as paired real tensors;
//! see [`cmul`] for the elementwise complex product over such pairs.
//!
//! Every primitive scans its output for non-finite values. The first offender
//! is latched as a fault and surfaced as an error at `backward`/`take_fault`,
//! so a training step can be skipped instead of silently propagating NaNs.

use crate::error::{Error, Result};

/// Real 2-D tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vec(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn col_vec(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a recorded tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const NORMALIZE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId, ta: bool, tb: bool },
    Add { a: TensorId, b: TensorId },
    AddRowBroadcast { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, k: f64 },
    Relu { a: TensorId },
    Sigmoid { a: TensorId },
    Tanh { a: TensorId },
    Sin { a: TensorId },
    Cos { a: TensorId },
    Sqrt { a: TensorId },
    SoftmaxRows { a: TensorId, causal: bool },
    LayerNormRows { a: TensorId, gamma: TensorId, beta: TensorId },
    Sum { a: TensorId },
    Slice { a: TensorId, r0: usize, r1: usize, c0: usize, c1: usize },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    Interleave2 { a: TensorId, b: TensorId },
    Stride2 { a: TensorId, offset: usize },
    NormalizeRow { a: TensorId },
    Reshape { a: TensorId },
}

struct Node {
    op: Op,
    out: Tensor,
    requires_grad: bool,
}

/// Record of one episode's (or one function's) computation.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<String>,
    grad_enabled: bool,
    normalize_guard_events: u32,
}

/// `out += op(a) * op(b)`, with `out` already shaped `(m, n)`.
fn matmul_acc(out: &mut [f64], a: &Tensor, ta: bool, b: &Tensor, tb: bool) {
    let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(ka, kb, "matmul inner dimensions differ: {ka} vs {kb}");
    assert_eq!(out.len(), m * n, "matmul output buffer mismatch");
    let k = ka;
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let arow = a.row(i);
                let dst = &mut out[i * n..(i + 1) * n];
                for (kk, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (d, &bv) in dst.iter_mut().zip(b.row(kk)) {
                        *d += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = a.row(i);
                let dst = &mut out[i * n..(i + 1) * n];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        (true, false) => {
            for kk in 0..k {
                let arow = a.row(kk);
                let brow = b.row(kk);
                for (i, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let dst = &mut out[i * n..(i + 1) * n];
                    for (d, &bv) in dst.iter_mut().zip(brow) {
                        *d += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        acc += a.data[kk * a.cols + i] * b.data[j * b.cols + kk];
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

fn matmul_values(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let m = if ta { a.cols } else { a.rows };
    let n = if tb { b.rows } else { b.cols };
    let mut out = vec![0.0; m * n];
    matmul_acc(&mut out, a, ta, b, tb);
    Tensor::new(m, n, out)
}

impl Tape {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::with_capacity(1024),
            grads: Vec::new(),
            fault: None,
            grad_enabled,
            normalize_guard_events: 0,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Times the guarded L2-normalization fallback fired on this tape.
    pub fn normalize_guard_events(&self) -> u32 {
        self.normalize_guard_events
    }

    /// First numeric fault recorded on this tape, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.idx()].out
    }

    pub fn value_scalar(&self, id: TensorId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.len(), 1, "value_scalar on non-scalar tensor");
        t.data[0]
    }

    /// Gradient of the last `backward` call w.r.t. `id` (leaves only).
    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.grads.get(id.idx()).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, out: Tensor, requires_grad: bool) -> TensorId {
        if self.fault.is_none() && !out.is_finite() {
            self.fault = Some(format!("non-finite output of {} at node {}", op_name(&op), self.nodes.len()));
        }
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Node { op, out, requires_grad: requires_grad && self.grad_enabled });
        id
    }

    fn req(&self, id: TensorId) -> bool {
        self.nodes[id.idx()].requires_grad
    }

    /// Tensor leaf that participates in gradient computation.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(Op::Leaf, t, true)
    }

    /// Tensor leaf excluded from gradient computation.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push(Op::Leaf, t, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> TensorId {
        self.constant(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: TensorId, ta: bool, b: TensorId, tb: bool) -> TensorId {
        let out = matmul_values(self.value(a), ta, self.value(b), tb);
        let rg = self.req(a) || self.req(b);
        self.push(Op::MatMul { a, b, ta, tb }, out, rg)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape mismatch");
        let out = Tensor::new(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect());
        let rg = self.req(a) || self.req(b);
        self.push(Op::Add { a, b }, out, rg)
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row_broadcast(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(y.rows, 1, "broadcast rhs must be a single row");
        assert_eq!(x.cols, y.cols, "broadcast width mismatch");
        let mut data = x.data.clone();
        for i in 0..x.rows {
            for (d, q) in data[i * x.cols..(i + 1) * x.cols].iter_mut().zip(&y.data) {
                *d += q;
            }
        }
        let out = Tensor::new(x.rows, x.cols, data);
        let rg = self.req(a) || self.req(b);
        self.push(Op::AddRowBroadcast { a, b }, out, rg)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "sub shape mismatch");
        let out = Tensor::new(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect());
        let rg = self.req(a) || self.req(b);
        self.push(Op::Sub { a, b }, out, rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shape mismatch");
        let out = Tensor::new(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
        let rg = self.req(a) || self.req(b);
        self.push(Op::Mul { a, b }, out, rg)
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| v * k).collect());
        let rg = self.req(a);
        self.push(Op::Scale { a, k }, out, rg)
    }

    fn unary(&mut self, f: impl Fn(f64) -> f64, op: Op, a: TensorId) -> TensorId {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|&v| f(v)).collect());
        let rg = self.req(a);
        self.push(op, out, rg)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(|v| v.max(0.0), Op::Relu { a }, a)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(|v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { a }, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(f64::tanh, Op::Tanh { a }, a)
    }

    pub fn sin(&mut self, a: TensorId) -> TensorId {
        self.unary(f64::sin, Op::Sin { a }, a)
    }

    pub fn cos(&mut self, a: TensorId) -> TensorId {
        self.unary(f64::cos, Op::Cos { a }, a)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.unary(f64::sqrt, Op::Sqrt { a }, a)
    }

    /// Row-wise softmax. With `causal`, entries above the main diagonal are
    /// excluded from the distribution and output exactly zero.
    pub fn softmax_rows(&mut self, a: TensorId, causal: bool) -> TensorId {
        let x = self.value(a);
        let (rows, cols) = (x.rows, x.cols);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let limit = if causal { (i + 1).min(cols) } else { cols };
            let row = &x.data[i * cols..i * cols + limit];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut data[i * cols..i * cols + limit];
            let mut sum = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let out = Tensor::new(rows, cols, data);
        let rg = self.req(a);
        self.push(Op::SoftmaxRows { a, causal }, out, rg)
    }

    /// Row-wise layer normalization with affine parameters.
    pub fn layer_norm_rows(&mut self, a: TensorId, gamma: TensorId, beta: TensorId) -> TensorId {
        let (x, g, b) = (self.value(a), self.value(gamma), self.value(beta));
        assert_eq!(g.rows, 1, "layer-norm gamma must be a row");
        assert_eq!(b.rows, 1, "layer-norm beta must be a row");
        assert_eq!(x.cols, g.cols, "layer-norm gamma width mismatch");
        assert_eq!(x.cols, b.cols, "layer-norm beta width mismatch");
        let (rows, cols) = (x.rows, x.cols);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..cols {
                data[i * cols + j] = g.data[j] * (row[j] - mean) * inv + b.data[j];
            }
        }
        let out = Tensor::new(rows, cols, data);
        let rg = self.req(a) || self.req(gamma) || self.req(beta);
        self.push(Op::LayerNormRows { a, gamma, beta }, out, rg)
    }

    /// Sum of all entries, as a `(1,1)` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let x = self.value(a);
        let out = Tensor::scalar(x.data.iter().sum());
        let rg = self.req(a);
        self.push(Op::Sum { a }, out, rg)
    }

    pub fn slice(&mut self, a: TensorId, r0: usize, r1: usize, c0: usize, c1: usize) -> TensorId {
        let x = self.value(a);
        assert!(r0 < r1 && r1 <= x.rows && c0 < c1 && c1 <= x.cols, "slice out of bounds");
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            data.extend_from_slice(&x.row(i)[c0..c1]);
        }
        let out = Tensor::new(r1 - r0, c1 - c0, data);
        let rg = self.req(a);
        self.push(Op::Slice { a, r0, r1, c0, c1 }, out, rg)
    }

    /// Slice a range of columns (keeps all rows).
    pub fn slice_cols(&mut self, a: TensorId, c0: usize, c1: usize) -> TensorId {
        let rows = self.value(a).rows;
        self.slice(a, 0, rows, c0, c1)
    }

    pub fn row_of(&mut self, a: TensorId, r: usize) -> TensorId {
        let cols = self.value(a).cols;
        self.slice(a, r, r + 1, 0, cols)
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows width mismatch");
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        let out = Tensor::new(rows, cols, data);
        let rg = parts.iter().any(|&p| self.req(p));
        self.push(Op::ConcatRows { parts: parts.to_vec() }, out, rg)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols height mismatch");
                data.extend_from_slice(t.row(i));
            }
        }
        let out = Tensor::new(rows, total, data);
        let rg = parts.iter().any(|&p| self.req(p));
        self.push(Op::ConcatCols { parts: parts.to_vec() }, out, rg)
    }

    /// Interleave two equal-length column vectors: `[a0, b0, a1, b1, ...]`.
    pub fn interleave2(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, 1, "interleave expects column vectors");
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "interleave shape mismatch");
        let mut data = Vec::with_capacity(2 * x.rows);
        for i in 0..x.rows {
            data.push(x.data[i]);
            data.push(y.data[i]);
        }
        let out = Tensor::col_vec(data);
        let rg = self.req(a) || self.req(b);
        self.push(Op::Interleave2 { a, b }, out, rg)
    }

    /// Every second entry of a column vector, starting at `offset` (0 or 1).
    pub fn stride2(&mut self, a: TensorId, offset: usize) -> TensorId {
        let x = self.value(a);
        assert_eq!(x.cols, 1, "stride2 expects a column vector");
        assert!(offset < 2 && x.rows % 2 == 0, "stride2 shape mismatch");
        let data: Vec<f64> = x.data.iter().skip(offset).step_by(2).copied().collect();
        let out = Tensor::col_vec(data);
        let rg = self.req(a);
        self.push(Op::Stride2 { a, offset }, out, rg)
    }

    /// Guarded L2 normalization of a single row. Near-zero input falls back
    /// to the first canonical basis vector with zero gradient and bumps the
    /// guard-event counter.
    pub fn normalize_row(&mut self, a: TensorId) -> TensorId {
        let x = self.value(a);
        assert_eq!(x.rows, 1, "normalize_row expects a single row");
        let cols = x.cols;
        let norm = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let out = if norm < NORMALIZE_GUARD {
            let mut e1 = vec![0.0; cols];
            e1[0] = 1.0;
            Tensor::row_vec(e1)
        } else {
            Tensor::row_vec(x.data.iter().map(|v| v / norm).collect())
        };
        if norm < NORMALIZE_GUARD {
            self.normalize_guard_events += 1;
        }
        let rg = self.req(a);
        self.push(Op::NormalizeRow { a }, out, rg)
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape must preserve element count");
        let out = Tensor::new(rows, cols, x.data.clone());
        let rg = self.req(a);
        self.push(Op::Reshape { a }, out, rg)
    }

    /// Surface a latched numeric fault as an error.
    pub fn take_fault(&mut self) -> Result<()> {
        match self.fault.take() {
            Some(ctx) => Err(Error::NumericFault { context: ctx }),
            None => Ok(()),
        }
    }

    /// Reverse pass seeded with `d(loss)/d(root) = 1`.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        self.backward_seeded(root, 1.0)
    }

    /// Reverse pass with an explicit seed, for accumulating scaled episode
    /// losses across independent tapes.
    pub fn backward_seeded(&mut self, root: TensorId, seed: f64) -> Result<()> {
        if let Some(ctx) = &self.fault {
            return Err(Error::NumericFault { context: ctx.clone() });
        }
        if !self.grad_enabled {
            return Err(Error::invalid("backward on a tape built with gradients disabled"));
        }
        let root_t = self.value(root);
        if root_t.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar root, got {}x{}",
                root_t.rows, root_t.cols
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.idx()].requires_grad {
            self.grads[root.idx()] = Some(Tensor::scalar(seed));
        }

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &gout);
            // Leaf gradients stay readable after the pass.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.grads[idx] = Some(gout);
            }
        }
        for (idx, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NumericFault { context: format!("non-finite gradient at node {idx}") });
                }
            }
        }
        Ok(())
    }

    /// Remove the grad tensor for `id`, creating a zeroed one if absent.
    fn take_grad_slot(&mut self, id: TensorId) -> Tensor {
        match self.grads[id.idx()].take() {
            Some(g) => g,
            None => {
                let t = &self.nodes[id.idx()].out;
                Tensor::zeros(t.rows, t.cols)
            }
        }
    }

    fn accum(&mut self, id: TensorId, delta: Tensor) {
        if !self.nodes[id.idx()].requires_grad {
            return;
        }
        match &mut self.grads[id.idx()] {
            Some(g) => {
                debug_assert_eq!((g.rows, g.cols), (delta.rows, delta.cols));
                for (a, b) in g.data.iter_mut().zip(&delta.data) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, idx: usize, gout: &Tensor) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                // C = A' B' with A' = op(A), B' = op(B). Gradients accumulate
                // straight into the slot to avoid temporaries on the hot path.
                if self.req(a) {
                    let mut slot = self.take_grad_slot(a);
                    if ta {
                        // dA = (dC B'^T)^T = B' dC^T
                        match tb {
                            false => matmul_acc(&mut slot.data, self.value(b), false, gout, true),
                            true => matmul_acc(&mut slot.data, self.value(b), true, gout, true),
                        }
                    } else {
                        match tb {
                            false => matmul_acc(&mut slot.data, gout, false, self.value(b), true),
                            true => matmul_acc(&mut slot.data, gout, false, self.value(b), false),
                        }
                    }
                    self.grads[a.idx()] = Some(slot);
                }
                if self.req(b) {
                    let mut slot = self.take_grad_slot(b);
                    if tb {
                        // dB = (A'^T dC)^T = dC^T A'
                        match ta {
                            false => matmul_acc(&mut slot.data, gout, true, self.value(a), false),
                            true => matmul_acc(&mut slot.data, gout, true, self.value(a), true),
                        }
                    } else {
                        match ta {
                            false => matmul_acc(&mut slot.data, self.value(a), true, gout, false),
                            true => matmul_acc(&mut slot.data, self.value(a), false, gout, false),
                        }
                    }
                    self.grads[b.idx()] = Some(slot);
                }
            }
            Op::Add { a, b } => {
                self.accum(a, gout.clone());
                self.accum(b, gout.clone());
            }
            Op::AddRowBroadcast { a, b } => {
                self.accum(a, gout.clone());
                if self.req(b) {
                    let cols = gout.cols;
                    let mut db = vec![0.0; cols];
                    for i in 0..gout.rows {
                        for (d, v) in db.iter_mut().zip(gout.row(i)) {
                            *d += v;
                        }
                    }
                    self.accum(b, Tensor::row_vec(db));
                }
            }
            Op::Sub { a, b } => {
                self.accum(a, gout.clone());
                if self.req(b) {
                    let db = Tensor::new(gout.rows, gout.cols, gout.data.iter().map(|v| -v).collect());
                    self.accum(b, db);
                }
            }
            Op::Mul { a, b } => {
                if self.req(a) {
                    let y = self.value(b);
                    let da =
                        Tensor::new(gout.rows, gout.cols, gout.data.iter().zip(&y.data).map(|(g, v)| g * v).collect());
                    self.accum(a, da);
                }
                if self.req(b) {
                    let x = self.value(a);
                    let db =
                        Tensor::new(gout.rows, gout.cols, gout.data.iter().zip(&x.data).map(|(g, v)| g * v).collect());
                    self.accum(b, db);
                }
            }
            Op::Scale { a, k } => {
                let da = Tensor::new(gout.rows, gout.cols, gout.data.iter().map(|v| v * k).collect());
                self.accum(a, da);
            }
            Op::Relu { a } => {
                let x = self.value(a);
                let da = Tensor::new(
                    gout.rows,
                    gout.cols,
                    gout.data.iter().zip(&x.data).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect(),
                );
                self.accum(a, da);
            }
            Op::Sigmoid { a } => {
                let y = &self.nodes[idx].out;
                let da = Tensor::new(
                    gout.rows,
                    gout.cols,
                    gout.data.iter().zip(&y.data).map(|(g, v)| g * v * (1.0 - v)).collect(),
                );
                self.accum(a, da);
            }
            Op::Tanh { a } => {
                let y = &self.nodes[idx].out;
                let da = Tensor::new(
                    gout.rows,
                    gout.cols,
                    gout.data.iter().zip(&y.data).map(|(g, v)| g * (1.0 - v * v)).collect(),
                );
                self.accum(a, da);
            }
            Op::Sin { a } => {
                let x = self.value(a);
                let da =
                    Tensor::new(gout.rows, gout.cols, gout.data.iter().zip(&x.data).map(|(g, v)| g * v.cos()).collect());
                self.accum(a, da);
            }
            Op::Cos { a } => {
                let x = self.value(a);
                let da =
                    Tensor::new(gout.rows, gout.cols, gout.data.iter().zip(&x.data).map(|(g, v)| -g * v.sin()).collect());
                self.accum(a, da);
            }
            Op::Sqrt { a } => {
                let y = &self.nodes[idx].out;
                let da =
                    Tensor::new(gout.rows, gout.cols, gout.data.iter().zip(&y.data).map(|(g, v)| 0.5 * g / v).collect());
                self.accum(a, da);
            }
            Op::SoftmaxRows { a, causal } => {
                let y = &self.nodes[idx].out;
                let (rows, cols) = (y.rows, y.cols);
                let mut da = vec![0.0; rows * cols];
                for i in 0..rows {
                    let limit = if causal { (i + 1).min(cols) } else { cols };
                    let yrow = &y.data[i * cols..i * cols + limit];
                    let grow = &gout.data[i * cols..i * cols + limit];
                    let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                    for j in 0..limit {
                        da[i * cols + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accum(a, Tensor::new(rows, cols, da));
            }
            Op::LayerNormRows { a, gamma, beta } => {
                let x = self.value(a).clone();
                let g = self.value(gamma).clone();
                let (rows, cols) = (x.rows, x.cols);
                let mut da = vec![0.0; rows * cols];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for i in 0..rows {
                    let row = x.row(i);
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let grow = gout.row(i);
                    let mut mean_gg = 0.0;
                    let mut mean_ggx = 0.0;
                    for j in 0..cols {
                        let xhat = (row[j] - mean) * inv;
                        let gg = grow[j] * g.data[j];
                        mean_gg += gg;
                        mean_ggx += gg * xhat;
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                    }
                    mean_gg /= cols as f64;
                    mean_ggx /= cols as f64;
                    for j in 0..cols {
                        let xhat = (row[j] - mean) * inv;
                        let gg = grow[j] * g.data[j];
                        da[i * cols + j] = inv * (gg - mean_gg - xhat * mean_ggx);
                    }
                }
                self.accum(a, Tensor::new(rows, cols, da));
                self.accum(gamma, Tensor::row_vec(dgamma));
                self.accum(beta, Tensor::row_vec(dbeta));
            }
            Op::Sum { a } => {
                let x = self.value(a);
                let da = Tensor::new(x.rows, x.cols, vec![gout.data[0]; x.len()]);
                self.accum(a, da);
            }
            Op::Slice { a, r0, r1, c0, c1 } => {
                let x = self.value(a);
                let mut da = Tensor::zeros(x.rows, x.cols);
                for i in r0..r1 {
                    for j in c0..c1 {
                        da.data[i * x.cols + j] = gout.data[(i - r0) * (c1 - c0) + (j - c0)];
                    }
                }
                self.accum(a, da);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let t_rows = self.value(p).rows;
                    let cols = gout.cols;
                    if self.req(p) {
                        let mut dp = Vec::with_capacity(t_rows * cols);
                        dp.extend_from_slice(&gout.data[offset * cols..(offset + t_rows) * cols]);
                        self.accum(p, Tensor::new(t_rows, cols, dp));
                    }
                    offset += t_rows;
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for p in parts {
                    let (prows, pcols) = {
                        let t = self.value(p);
                        (t.rows, t.cols)
                    };
                    if self.req(p) {
                        let mut dp = Tensor::zeros(prows, pcols);
                        for i in 0..prows {
                            dp.data[i * pcols..(i + 1) * pcols]
                                .copy_from_slice(&gout.row(i)[offset..offset + pcols]);
                        }
                        self.accum(p, dp);
                    }
                    offset += pcols;
                }
            }
            Op::Interleave2 { a, b } => {
                let n = gout.rows / 2;
                let da: Vec<f64> = (0..n).map(|i| gout.data[2 * i]).collect();
                let db: Vec<f64> = (0..n).map(|i| gout.data[2 * i + 1]).collect();
                self.accum(a, Tensor::col_vec(da));
                self.accum(b, Tensor::col_vec(db));
            }
            Op::Stride2 { a, offset } => {
                let x = self.value(a);
                let mut da = Tensor::zeros(x.rows, 1);
                for (i, g) in gout.data.iter().enumerate() {
                    da.data[2 * i + offset] = *g;
                }
                self.accum(a, da);
            }
            Op::NormalizeRow { a } => {
                let x = self.value(a);
                let norm = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < NORMALIZE_GUARD {
                    // Guarded fallback has zero gradient by definition.
                    self.accum(a, Tensor::zeros(1, x.cols));
                } else {
                    let y = &self.nodes[idx].out;
                    let dot: f64 = y.data.iter().zip(&gout.data).map(|(p, q)| p * q).sum();
                    let da: Vec<f64> =
                        gout.data.iter().zip(&y.data).map(|(g, v)| (g - v * dot) / norm).collect();
                    self.accum(a, Tensor::row_vec(da));
                }
            }
            Op::Reshape { a } => {
                let x = self.value(a);
                self.accum(a, Tensor::new(x.rows, x.cols, gout.data.clone()));
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::AddRowBroadcast { .. } => "add_row_broadcast",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Sin { .. } => "sin",
        Op::Cos { .. } => "cos",
        Op::Sqrt { .. } => "sqrt",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNormRows { .. } => "layer_norm_rows",
        Op::Sum { .. } => "sum",
        Op::Slice { .. } => "slice",
        Op::ConcatRows { .. } => "concat_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::Interleave2 { .. } => "interleave2",
        Op::Stride2 { .. } => "stride2",
        Op::NormalizeRow { .. } => "normalize_row",
        Op::Reshape { .. } => "reshape",
    }
}

/// A complex tensor as a (real, imaginary) pair of same-shape real tensors.
#[derive(Debug, Clone, Copy)]
pub struct CPair {
    pub re: TensorId,
    pub im: TensorId,
}

/// Elementwise complex multiplication over paired channels.
pub fn cmul(tape: &mut Tape, a: CPair, b: CPair) -> CPair {
    let rr = tape.mul(a.re, b.re);
    let ii = tape.mul(a.im, b.im);
    let ri = tape.mul(a.re, b.im);
    let ir = tape.mul(a.im, b.re);
    CPair { re: tape.sub(rr, ii), im: tape.add(ri, ir) }
}

/// Max relative error between recorded gradients and central finite
/// differences of `f`, probed on `probes` coordinates of `x`.
///
/// `f` must be a pure function of the tape it is handed; it is re-run for
/// every probe with perturbed inputs and gradients disabled. The relative
/// error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64, probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> TensorId,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    let mut tape = Tape::new(true);
    let xid = tape.leaf(x.clone());
    let y = f(&mut tape, xid);
    tape.backward(y)?;
    let analytic = tape.grad(xid).expect("leaf gradient").clone();

    let eval = |data: &Tensor| -> Result<f64> {
        let mut t = Tape::new(false);
        let id = t.constant(data.clone());
        let out = f(&mut t, id);
        t.take_fault()?;
        Ok(t.value_scalar(out))
    };

    use rand::Rng;
    let mut rng = crate::rng::stream(seed, 0xfd);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let k = rng.random_range(0..x.len());
        let mut plus = x.clone();
        plus.data[k] += h;
        let mut minus = x.clone();
        minus.data[k] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic.data[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new(false);
        let x = t.constant(Tensor::row_vec(vec![0.0, 0.0, 0.0]));
        let y = t.softmax_rows(x, false);
        for v in &t.value(y).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_causal_zeros_above_diagonal() {
        let mut t = Tape::new(false);
        let x = t.constant(Tensor::new(3, 3, vec![5.0, 1.0, 2.0, 0.3, 0.7, 9.0, 1.0, 1.0, 1.0]));
        let y = t.softmax_rows(x, true);
        let v = t.value(y);
        assert_eq!(v.data[1], 0.0);
        assert_eq!(v.data[2], 0.0);
        assert_eq!(v.data[5], 0.0);
        for i in 0..3 {
            let s: f64 = v.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(v.data[0], 1.0);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0f64..30.0, 6)) {
            let mut t = Tape::new(false);
            let x = t.constant(Tensor::new(2, 3, vals));
            let y = t.softmax_rows(x, false);
            let v = t.value(y);
            for i in 0..2 {
                let s: f64 = v.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(v.row(i).iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn normalize_row_basics() {
        let mut t = Tape::new(false);
        let x = t.constant(Tensor::row_vec(vec![3.0, 4.0]));
        let y = t.normalize_row(x);
        let v = t.value(y);
        assert!((v.data[0] - 0.6).abs() < 1e-15);
        assert!((v.data[1] - 0.8).abs() < 1e-15);
        assert_eq!(t.normalize_guard_events(), 0);
    }

    #[test]
    fn normalize_row_guard_fires_on_zero() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![0.0, 0.0, 0.0]));
        let y = t.normalize_row(x);
        assert_eq!(t.value(y).data, vec![1.0, 0.0, 0.0]);
        assert_eq!(t.normalize_guard_events(), 1);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn cmul_paired_channels() {
        // (1 + 2i) * (3 - 1i) = 5 + 5i
        let mut t = Tape::new(false);
        let a = CPair { re: t.constant(Tensor::scalar(1.0)), im: t.constant(Tensor::scalar(2.0)) };
        let b = CPair { re: t.constant(Tensor::scalar(3.0)), im: t.constant(Tensor::scalar(-1.0)) };
        let c = cmul(&mut t, a, b);
        assert!((t.value_scalar(c.re) - 5.0).abs() < 1e-15);
        assert!((t.value_scalar(c.im) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![1.0, -2.0, 7.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_squared_norm_is_two_x() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![1.5, -2.0, 0.25]));
        let sq = t.mul(x, x);
        let s = t.sum(sq);
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap();
        assert_eq!(g.data, vec![3.0, -4.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![1.0, 2.0]));
        let y = t.scale(x, 2.0);
        assert!(matches!(t.backward(y), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn numeric_fault_is_latched_and_surfaces() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::scalar(1e308));
        let y = t.mul(x, x); // overflows to inf
        assert!(t.fault().is_some());
        let s = t.sum(y);
        assert!(matches!(t.backward(s), Err(Error::NumericFault { .. })));
    }

    #[test]
    #[should_panic(expected = "matmul inner dimensions differ")]
    fn matmul_shape_mismatch_panics() {
        let mut t = Tape::new(false);
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        let _ = t.matmul(a, b);
    }

    #[test]
    fn layer_norm_output_statistics() {
        let mut t = Tape::new(false);
        let x = t.constant(Tensor::new(2, 8, (0..16).map(|i| (i * i) as f64 * 0.3 - 5.0).collect()));
        let gamma = t.constant(Tensor::row_vec(vec![1.0; 8]));
        let beta = t.constant(Tensor::row_vec(vec![0.0; 8]));
        let y = t.layer_norm_rows(x, gamma, beta);
        let v = t.value(y);
        for i in 0..2 {
            let mean: f64 = v.row(i).iter().sum::<f64>() / 8.0;
            let var: f64 = v.row(i).iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "row variance {var}");
        }
    }

    fn quadratic(t: &mut Tape, x: TensorId) -> TensorId {
        let sq = t.mul(x, x);
        t.sum(sq)
    }

    #[test]
    fn finite_difference_exact_on_quadratic() {
        let x = Tensor::row_vec(vec![0.3, -1.2, 2.0, 0.01]);
        let err = finite_difference_check(quadratic, &x, 1e-5, 8, 1).unwrap();
        assert!(err < 1e-9, "quadratic fd error {err}");
    }

    #[test]
    fn finite_difference_through_softmax_matmul_chain() {
        let w = Tensor::new(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let f = move |t: &mut Tape, x: TensorId| {
            let wid = t.constant(w.clone());
            let z = t.matmul(x, wid);
            let s = t.softmax_rows(z, false);
            let sq = t.mul(s, s);
            t.sum(sq)
        };
        let x = Tensor::new(2, 4, (0..8).map(|i| (i as f64 * 0.71).cos()).collect());
        let err = finite_difference_check(f, &x, 1e-5, 16, 2).unwrap();
        assert!(err < 1e-6, "softmax chain fd error {err}");
    }

    #[test]
    fn finite_difference_relu_away_from_kinks() {
        let f = |t: &mut Tape, x: TensorId| {
            let r = t.relu(x);
            let sq = t.mul(r, r);
            t.sum(sq)
        };
        // All coordinates at least 1e-3 from zero.
        let x = Tensor::row_vec(vec![0.8, -0.9, 0.4, -0.2, 1.7, -1.1]);
        let err = finite_difference_check(f, &x, 1e-5, 12, 3).unwrap();
        assert!(err < 1e-6, "relu fd error {err}");
    }

    #[test]
    fn finite_difference_layer_norm_and_trig() {
        let f = |t: &mut Tape, x: TensorId| {
            let gamma = t.constant(Tensor::row_vec(vec![1.3, 0.7, -0.4, 1.0]));
            let beta = t.constant(Tensor::row_vec(vec![0.1, 0.0, -0.2, 0.5]));
            let ln = t.layer_norm_rows(x, gamma, beta);
            let s = t.sin(ln);
            let c = t.cos(x);
            let m = t.mul(s, c);
            t.sum(m)
        };
        let x = Tensor::new(1, 4, vec![0.5, -0.8, 1.2, 0.3]);
        let err = finite_difference_check(f, &x, 1e-5, 8, 4).unwrap();
        assert!(err < 1e-6, "layer-norm fd error {err}");
    }

    #[test]
    fn finite_difference_through_normalize_and_complex_ops() {
        let f = |t: &mut Tape, x: TensorId| {
            let n = t.normalize_row(x);
            let re = t.slice_cols(n, 0, 2);
            let im = t.slice_cols(n, 2, 4);
            let re_c = t.reshape(re, 2, 1);
            let im_c = t.reshape(im, 2, 1);
            let inter = t.interleave2(re_c, im_c);
            let even = t.stride2(inter, 0);
            let odd = t.stride2(inter, 1);
            let p = t.mul(even, odd);
            let s = t.sum(p);
            let sg = t.sigmoid(s);
            let th = t.tanh(sg);
            t.sum(th)
        };
        let x = Tensor::row_vec(vec![1.1, -0.4, 0.9, 2.2]);
        let err = finite_difference_check(f, &x, 1e-6, 8, 5).unwrap();
        assert!(err < 1e-6, "normalize chain fd error {err}");
    }

    #[test]
    fn normalize_gradient_orthogonal_to_input() {
        // For y = x/||x||, any scalar loss gradient w.r.t. x is orthogonal to
        // x: radial perturbations do not move the output to first order.
        let mut t = Tape::new(true);
        let xv = vec![1.0, 2.0, -0.5, 0.7];
        let x = t.leaf(Tensor::row_vec(xv.clone()));
        let y = t.normalize_row(x);
        let c = t.constant(Tensor::row_vec(vec![0.3, -1.0, 0.9, 0.4]));
        let p = t.mul(y, c);
        let s = t.sum(p);
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap();
        let dot: f64 = g.data.iter().zip(&xv).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12, "radial gradient component {dot}");

        // Finite-difference version: f(x + h x) stays put to first order.
        let scalar_loss = |t: &mut Tape, x: TensorId| {
            let y = t.normalize_row(x);
            let c = t.constant(Tensor::row_vec(vec![0.3, -1.0, 0.9, 0.4]));
            let p = t.mul(y, c);
            t.sum(p)
        };
        let h = 1e-5;
        let eval = |scale: f64| {
            let mut t = Tape::new(false);
            let id = t.constant(Tensor::row_vec(xv.iter().map(|v| v * (1.0 + scale)).collect()));
            let out = scalar_loss(&mut t, id);
            t.value_scalar(out)
        };
        let directional = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(directional.abs() < 1e-6, "radial directional derivative {directional}");
    }

    #[test]
    fn tape_replay_is_bit_deterministic() {
        let build = || {
            let mut t = Tape::new(true);
            let x = t.leaf(Tensor::new(2, 3, vec![0.3, 1.0, -0.7, 0.2, 0.9, -1.4]));
            let w = t.leaf(Tensor::new(3, 2, vec![0.5, -0.25, 1.5, 0.75, -0.3, 0.1]));
            let z = t.matmul(x, w);
            let sm = t.softmax_rows(z, true);
            let s = t.sum(sm);
            let sq = t.mul(s, s);
            t.backward(sq).unwrap();
            (t.grad(x).unwrap().data.clone(), t.grad(w).unwrap().data.clone())
        };
        let (a1, b1) = build();
        let (a2, b2) = build();
        assert!(a1.iter().zip(&a2).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(b1.iter().zip(&b2).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let a = Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]);
        // a^T b via (true, false) equals transposing manually.
        let direct = matmul_values(&a, true, &b, false);
        let at = Tensor::new(2, 3, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let manual = matmul_values(&at, false, &b, false);
        assert_eq!(direct.data, manual.data);
        let b2 = Tensor::new(2, 3, vec![0.5, 2.0, -0.75, -1.0, 0.25, 1.5]);
        let direct_tt = matmul_values(&a, true, &b2, true);
        let manual_tt = matmul_values(&at, false, &b2, true);
        assert_eq!(direct_tt.data, manual_tt.data);
    }

    #[test]
    fn fanout_gradients_accumulate() {
        // loss = sum(x*x) + 3*sum(x) -> grad = 2x + 3
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![1.0, -2.0]));
        let sq = t.mul(x, x);
        let s1 = t.sum(sq);
        let s2 = t.sum(x);
        let s2_scaled = t.scale(s2, 3.0);
        let loss = t.add(s1, s2_scaled);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![5.0, -1.0]);
    }

    #[test]
    fn backward_seeded_scales_gradients() {
        let mut t = Tape::new(true);
        let x = t.leaf(Tensor::row_vec(vec![2.0, 3.0]));
        let s = t.sum(x);
        t.backward_seeded(s, -0.5).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![-0.5, -0.5]);
    }

    #[test]
    fn finite_difference_matmul_transpose_paths() {
        let w = Tensor::new(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect());
        let f = move |t: &mut Tape, x: TensorId| {
            let wid = t.constant(w.clone());
            // x is (3,2): use both x^T w and w^T x style products.
            let a = t.matmul_t(x, true, wid, false); // (2,4)
            let b = t.matmul_t(wid, true, x, false); // (4,2)
            let c = t.matmul_t(a, false, a, true); // (2,2), exercises the NT path
            let d = t.matmul_t(b, true, b, false); // (2,2), exercises the TN path
            let e = t.add(c, d);
            let sq = t.mul(e, e);
            t.sum(sq)
        };
        let x = Tensor::new(3, 2, (0..6).map(|i| (i as f64 * 0.9).sin()).collect());
        let err = finite_difference_check(f, &x, 1e-5, 6, 6).unwrap();
        assert!(err < 1e-6, "matmul transpose fd error {err}");
    }
}
