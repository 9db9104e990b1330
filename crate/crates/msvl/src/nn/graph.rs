//! Define-by-run reverse-mode tape.
//!
//! Every operation computes its forward value eagerly when pushed and records
//! its parent node ids; `backward` then walks the tape once in reverse
//! creation order (which is a reverse topological order by construction).
//! Any non-finite forward value aborts with the responsible node named, so
//! NaNs cannot propagate silently.
//!
//! Each training step builds a fresh graph: at the scales this crate targets,
//! rebuilding the tape is cheaper than managing a retained one, and it keeps
//! every pass bitwise reproducible.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Index(NodeId, usize),
    Stack(Vec<NodeId>),
    /// scalar * vector, gradients flow to both.
    ScalarMul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    FullyConnected {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Softmax(NodeId),
    GlobalAvgPool(NodeId),
    Concat(Vec<NodeId>),
    MeanVectors(Vec<NodeId>),
    CrossEntropy {
        logits: NodeId,
        target: usize,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Index(..) => "index",
            Op::Stack(..) => "stack",
            Op::ScalarMul(..) => "scalar_mul",
            Op::MatMul(..) => "matmul",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::GlobalAvgPool(..) => "global_average_pool",
            Op::Concat(..) => "concat",
            Op::MeanVectors(..) => "mean_vectors",
            Op::CrossEntropy { .. } => "cross_entropy_loss",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A single forward/backward tape.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` output with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NumericFault(format!(
                "non-finite value produced by node #{} ({})",
                self.nodes.len(),
                op.tag()
            )));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    /// Registers an input tensor (data or parameter) on the tape.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    // -- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_error("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_error("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(Op::Scale(x, factor), value)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(Op::Relu(x), value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(Op::LeakyRelu(x, slope), value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(Op::Sigmoid(x), value)
    }

    // -- reductions and reshapes -------------------------------------------

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 {
            return Err(Error::InvalidInput(format!(
                "index expects a rank-1 tensor, got shape {:?}",
                vx.shape()
            )));
        }
        if i >= vx.len() {
            return Err(Error::InvalidInput(format!(
                "index {i} out of bounds for length {}",
                vx.len()
            )));
        }
        let value = Tensor::scalar(vx.data()[i]);
        self.push(Op::Index(x, i), value)
    }

    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("stack of zero scalars".into()));
        }
        let mut data = Vec::with_capacity(xs.len());
        for &id in xs {
            let v = self.value(id);
            if v.len() != 1 {
                return Err(Error::InvalidInput(format!(
                    "stack expects scalars, got shape {:?}",
                    v.shape()
                )));
            }
            data.push(v.data()[0]);
        }
        let value = Tensor::vector(data);
        self.push(Op::Stack(xs.to_vec()), value)
    }

    pub fn scalar_mul(&mut self, s: NodeId, v: NodeId) -> Result<NodeId> {
        let vs = self.value(s);
        if vs.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "scalar_mul expects a scalar first argument, got shape {:?}",
                vs.shape()
            )));
        }
        let factor = vs.data()[0];
        let vv = self.value(v);
        let data = vv.data().iter().map(|x| factor * x).collect();
        let value = Tensor::new(vv.shape().to_vec(), data)?;
        self.push(Op::ScalarMul(s, v), value)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &id in xs {
            let v = self.value(id);
            if v.rank() != 1 {
                return Err(Error::InvalidInput(format!(
                    "concat expects rank-1 tensors, got shape {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::vector(data);
        self.push(Op::Concat(xs.to_vec()), value)
    }

    pub fn mean_vectors(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("mean of zero vectors".into()));
        }
        let shape = self.value(xs[0]).shape().to_vec();
        if shape.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "mean_vectors expects rank-1 tensors, got shape {shape:?}"
            )));
        }
        let mut data = vec![0.0; shape[0]];
        for &id in xs {
            let v = self.value(id);
            if v.shape() != shape {
                return Err(shape_error("mean_vectors", &shape, v.shape()));
            }
            for (acc, x) in data.iter_mut().zip(v.data()) {
                *acc += x;
            }
        }
        let n = xs.len() as f64;
        for v in &mut data {
            *v /= n;
        }
        let value = Tensor::vector(data);
        self.push(Op::MeanVectors(xs.to_vec()), value)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 || vx.is_empty() {
            return Err(Error::InvalidInput(format!(
                "softmax expects a non-empty rank-1 tensor, got shape {:?}",
                vx.shape()
            )));
        }
        let max = vx.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vx.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data = exps.iter().map(|e| e / total).collect();
        let value = Tensor::vector(data);
        self.push(Op::Softmax(x), value)
    }

    pub fn global_average_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let &[c, h, w] = vx.shape() else {
            return Err(Error::InvalidInput(format!(
                "global_average_pool expects [C, H, W], got shape {:?}",
                vx.shape()
            )));
        };
        let plane = h * w;
        let mut data = Vec::with_capacity(c);
        for ch in 0..c {
            let s: f64 = vx.data()[ch * plane..(ch + 1) * plane].iter().sum();
            data.push(s / plane as f64);
        }
        let value = Tensor::vector(data);
        self.push(Op::GlobalAvgPool(x), value)
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = match va.shape() {
            &[m, k] => (m, k),
            _ => return Err(shape_error("matmul", va.shape(), vb.shape())),
        };
        let (k2, n) = match vb.shape() {
            &[k2, n] => (k2, n),
            _ => return Err(shape_error("matmul", va.shape(), vb.shape())),
        };
        if k != k2 {
            return Err(shape_error("matmul", va.shape(), vb.shape()));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &va.data()[i * k..(i + 1) * k];
            let c_row = &mut data[i * n..(i + 1) * n];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &vb.data()[kk * n..(kk + 1) * n];
                for (cv, bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aik * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        self.push(Op::MatMul(a, b), value)
    }

    /// `y = W^T x + b` for rank-1 `x` of length `in`, or row-wise for rank-2
    /// `x` of shape `[n, in]`. `w` has shape `[in, out]`.
    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let vx = self.value(x);
        let vw = self.value(w);
        let &[in_dim, out_dim] = vw.shape() else {
            return Err(shape_error("fully_connected weight", vw.shape(), vx.shape()));
        };
        let rows = match vx.shape() {
            [i] if *i == in_dim => 1,
            [n, i] if *i == in_dim => *n,
            _ => return Err(shape_error("fully_connected", vx.shape(), vw.shape())),
        };
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.shape() != [out_dim] {
                return Err(shape_error("fully_connected bias", vb.shape(), &[out_dim]));
            }
        }
        let mut data = vec![0.0; rows * out_dim];
        if let Some(b) = b {
            let vb = self.value(b);
            for r in 0..rows {
                data[r * out_dim..(r + 1) * out_dim].copy_from_slice(vb.data());
            }
        }
        let vx = self.value(x);
        let vw = self.value(w);
        for r in 0..rows {
            let x_row = &vx.data()[r * in_dim..(r + 1) * in_dim];
            let y_row = &mut data[r * out_dim..(r + 1) * out_dim];
            for (i, &xi) in x_row.iter().enumerate() {
                let w_row = &vw.data()[i * out_dim..(i + 1) * out_dim];
                for (yv, wv) in y_row.iter_mut().zip(w_row) {
                    *yv += xi * wv;
                }
            }
        }
        let shape = if vx.rank() == 1 { vec![out_dim] } else { vec![rows, out_dim] };
        let value = Tensor::new(shape, data)?;
        self.push(Op::FullyConnected { x, w, b }, value)
    }

    /// 2-D convolution over `[C, H, W]` input with weight
    /// `[C_out, C_in/groups, kh, kw]`, zero padding, and channel groups.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        let &[c_in, h_in, w_in] = vx.shape() else {
            return Err(shape_error("conv2d input", vx.shape(), vw.shape()));
        };
        let &[c_out, cpg, kh, kw] = vw.shape() else {
            return Err(shape_error("conv2d weight", vw.shape(), vx.shape()));
        };
        if stride == 0 || groups == 0 {
            return Err(Error::InvalidInput("conv2d stride and groups must be positive".into()));
        }
        if c_in % groups != 0 || c_out % groups != 0 || cpg != c_in / groups {
            return Err(Error::InvalidInput(format!(
                "conv2d groups={groups} incompatible with channels {c_in}->{c_out} (weight expects {cpg} per group)"
            )));
        }
        if vb.shape() != [c_out] {
            return Err(shape_error("conv2d bias", vb.shape(), &[c_out]));
        }
        if h_in + 2 * pad < kh || w_in + 2 * pad < kw {
            return Err(Error::InvalidInput(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h_in + 2 * pad,
                w_in + 2 * pad
            )));
        }
        let out_h = (h_in + 2 * pad - kh) / stride + 1;
        let out_w = (w_in + 2 * pad - kw) / stride + 1;
        let out_per_group = c_out / groups;

        let mut data = vec![0.0; c_out * out_h * out_w];
        let xd = vx.data();
        let wd = vw.data();
        let bd = vb.data();
        for co in 0..c_out {
            let ci0 = (co / out_per_group) * cpg;
            let w_base = co * cpg * kh * kw;
            let out_base = co * out_h * out_w;
            for oy in 0..out_h {
                let iy0 = (oy * stride) as isize - pad as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = kh.min((h_in as isize - iy0).max(0) as usize);
                for ox in 0..out_w {
                    let ix0 = (ox * stride) as isize - pad as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = kw.min((w_in as isize - ix0).max(0) as usize);
                    let ix_lo = (ix0 + kx_lo as isize) as usize;
                    let span = kx_hi.saturating_sub(kx_lo);
                    let mut acc = bd[co];
                    for ci in 0..cpg {
                        let x_plane = (ci0 + ci) * h_in * w_in;
                        let w_chan = w_base + ci * kh * kw;
                        for ky in ky_lo..ky_hi {
                            let iy = (iy0 + ky as isize) as usize;
                            // kx range is pre-clipped, so ix0 + kx >= 0.
                            let xs = &xd[x_plane + iy * w_in + ix_lo..][..span];
                            let ws = &wd[w_chan + ky * kw + kx_lo..][..span];
                            for (xv, wv) in xs.iter().zip(ws) {
                                acc += xv * wv;
                            }
                        }
                    }
                    data[out_base + oy * out_w + ox] = acc;
                }
            }
        }
        let value = Tensor::new(vec![c_out, out_h, out_w], data)?;
        self.push(Op::Conv2d { x, w, b, stride, pad, groups }, value)
    }

    pub fn cross_entropy_loss(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.rank() != 1 || vl.is_empty() {
            return Err(Error::InvalidInput(format!(
                "cross_entropy_loss expects rank-1 logits, got shape {:?}",
                vl.shape()
            )));
        }
        if target >= vl.len() {
            return Err(Error::InvalidInput(format!(
                "cross_entropy_loss target {target} out of range for {} classes",
                vl.len()
            )));
        }
        let max = vl.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + vl.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - vl.data()[target];
        self.push(Op::CrossEntropy { logits, target }, Tensor::scalar(loss))
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep seeding d(out)/d(out) = 1. `out` must be a scalar.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward expects a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[out.0] = Some({
            let mut seed = Tensor::zeros(self.value(out).shape());
            seed.data_mut()[0] = 1.0;
            seed
        });

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Convenience wrapper: backward plus gradient extraction for `params`.
    pub fn eval_with_grads(&mut self, out: NodeId, params: &[NodeId]) -> Result<(f64, Vec<Tensor>)> {
        self.backward(out)?;
        let value = self.value(out).item()?;
        let grads = params
            .iter()
            .map(|&p| {
                self.grad(p)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(p).shape()))
            })
            .collect();
        Ok((value, grads))
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        // Parent grads and node values live in different structures, so each
        // arm reads values immutably and accumulates into `grads` directly.
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b].iter() {
                    let t = grads[p.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    for (acc, gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *acc += gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                {
                    let t = grads[a.0].get_or_insert_with(|| Tensor::zeros(va.shape()));
                    for ((acc, gv), bv) in t.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *acc += gv * bv;
                    }
                }
                {
                    let t = grads[b.0].get_or_insert_with(|| Tensor::zeros(vb.shape()));
                    for ((acc, gv), av) in t.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *acc += gv * av;
                    }
                }
            }
            Op::Scale(x, factor) => {
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
                for (acc, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *acc += factor * gv;
                }
            }
            Op::Sum(x) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                let gv = g.data()[0];
                for acc in t.data_mut() {
                    *acc += gv;
                }
            }
            Op::Index(x, i) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                t.data_mut()[*i] += g.data()[0];
            }
            Op::Stack(xs) => {
                for (i, &p) in xs.iter().enumerate() {
                    let shape = self.nodes[p.0].value.shape().to_vec();
                    let t = grads[p.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    t.data_mut()[0] += g.data()[i];
                }
            }
            Op::ScalarMul(s, v) => {
                let sv = self.nodes[s.0].value.data()[0];
                let vv = &self.nodes[v.0].value;
                {
                    let shape = self.nodes[s.0].value.shape().to_vec();
                    let t = grads[s.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    let dot: f64 = g.data().iter().zip(vv.data()).map(|(a, b)| a * b).sum();
                    t.data_mut()[0] += dot;
                }
                {
                    let t = grads[v.0].get_or_insert_with(|| Tensor::zeros(vv.shape()));
                    for (acc, gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *acc += sv * gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                {
                    // dA = G . B^T
                    let t = grads[a.0].get_or_insert_with(|| Tensor::zeros(va.shape()));
                    let td = t.data_mut();
                    for i in 0..m {
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let b_row = &vb.data()[kk * n..(kk + 1) * n];
                            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            td[i * k + kk] += dot;
                        }
                    }
                }
                {
                    // dB = A^T . G
                    let t = grads[b.0].get_or_insert_with(|| Tensor::zeros(vb.shape()));
                    let td = t.data_mut();
                    for i in 0..m {
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        let a_row = &va.data()[i * k..(i + 1) * k];
                        for (kk, &aik) in a_row.iter().enumerate() {
                            let t_row = &mut td[kk * n..(kk + 1) * n];
                            for (tv, gv) in t_row.iter_mut().zip(g_row) {
                                *tv += aik * gv;
                            }
                        }
                    }
                }
            }
            Op::FullyConnected { x, w, b } => {
                let vx = &self.nodes[x.0].value;
                let vw = &self.nodes[w.0].value;
                let in_dim = vw.shape()[0];
                let out_dim = vw.shape()[1];
                let rows = if vx.rank() == 1 { 1 } else { vx.shape()[0] };
                {
                    let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(vx.shape()));
                    let td = t.data_mut();
                    for r in 0..rows {
                        let g_row = &g.data()[r * out_dim..(r + 1) * out_dim];
                        for i in 0..in_dim {
                            let w_row = &vw.data()[i * out_dim..(i + 1) * out_dim];
                            let dot: f64 = g_row.iter().zip(w_row).map(|(a, c)| a * c).sum();
                            td[r * in_dim + i] += dot;
                        }
                    }
                }
                {
                    let t = grads[w.0].get_or_insert_with(|| Tensor::zeros(vw.shape()));
                    let td = t.data_mut();
                    for r in 0..rows {
                        let g_row = &g.data()[r * out_dim..(r + 1) * out_dim];
                        let x_row = &vx.data()[r * in_dim..(r + 1) * in_dim];
                        for (i, &xi) in x_row.iter().enumerate() {
                            let t_row = &mut td[i * out_dim..(i + 1) * out_dim];
                            for (tv, gv) in t_row.iter_mut().zip(g_row) {
                                *tv += xi * gv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let shape = self.nodes[b.0].value.shape().to_vec();
                    let t = grads[b.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    let td = t.data_mut();
                    for r in 0..rows {
                        let g_row = &g.data()[r * out_dim..(r + 1) * out_dim];
                        for (tv, gv) in td.iter_mut().zip(g_row) {
                            *tv += gv;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad, groups } => {
                self.conv2d_backward(*x, *w, *b, *stride, *pad, *groups, g, grads);
            }
            Op::Relu(x) => {
                let vx = &self.nodes[x.0].value;
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(vx.shape()));
                for ((acc, gv), xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                    if *xv > 0.0 {
                        *acc += gv;
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = &self.nodes[x.0].value;
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(vx.shape()));
                for ((acc, gv), xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                    *acc += if *xv > 0.0 { *gv } else { slope * gv };
                }
            }
            Op::Sigmoid(x) => {
                let sv = &self.nodes[id].value;
                let shape = self.nodes[x.0].value.shape().to_vec();
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                for ((acc, gv), s) in t.data_mut().iter_mut().zip(g.data()).zip(sv.data()) {
                    *acc += gv * s * (1.0 - s);
                }
            }
            Op::Softmax(x) => {
                let sv = &self.nodes[id].value;
                let dot: f64 = g.data().iter().zip(sv.data()).map(|(a, b)| a * b).sum();
                let shape = self.nodes[x.0].value.shape().to_vec();
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                for ((acc, gv), s) in t.data_mut().iter_mut().zip(g.data()).zip(sv.data()) {
                    *acc += s * (gv - dot);
                }
            }
            Op::GlobalAvgPool(x) => {
                let vx = &self.nodes[x.0].value;
                let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let plane = h * w;
                let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(vx.shape()));
                let td = t.data_mut();
                for ch in 0..c {
                    let gv = g.data()[ch] / plane as f64;
                    for acc in &mut td[ch * plane..(ch + 1) * plane] {
                        *acc += gv;
                    }
                }
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &p in xs {
                    let len = self.nodes[p.0].value.len();
                    let shape = self.nodes[p.0].value.shape().to_vec();
                    let t = grads[p.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    for (acc, gv) in t.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                        *acc += gv;
                    }
                    offset += len;
                }
            }
            Op::MeanVectors(xs) => {
                let n = xs.len() as f64;
                for &p in xs {
                    let shape = self.nodes[p.0].value.shape().to_vec();
                    let t = grads[p.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    for (acc, gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *acc += gv / n;
                    }
                }
            }
            Op::CrossEntropy { logits, target } => {
                let vl = &self.nodes[logits.0].value;
                let max = vl.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = vl.data().iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let gv = g.data()[0];
                let t = grads[logits.0].get_or_insert_with(|| Tensor::zeros(vl.shape()));
                for (i, acc) in t.data_mut().iter_mut().enumerate() {
                    let p = exps[i] / total;
                    *acc += gv * (p - if i == *target { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        groups: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let vx = &self.nodes[x.0].value;
        let vw = &self.nodes[w.0].value;
        let (h_in, w_in) = (vx.shape()[1], vx.shape()[2]);
        let (c_out, cpg, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        let (out_h, out_w) = (g.shape()[1], g.shape()[2]);
        let out_per_group = c_out / groups;
        let xd = vx.data();
        let wd = vw.data();
        let gd = g.data();

        {
            let shape = self.nodes[b.0].value.shape().to_vec();
            let t = grads[b.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let td = t.data_mut();
            for co in 0..c_out {
                let s: f64 = gd[co * out_h * out_w..(co + 1) * out_h * out_w].iter().sum();
                td[co] += s;
            }
        }

        {
            let t = grads[w.0].get_or_insert_with(|| Tensor::zeros(vw.shape()));
            let td = t.data_mut();
            for co in 0..c_out {
                let ci0 = (co / out_per_group) * cpg;
                let w_base = co * cpg * kh * kw;
                let g_base = co * out_h * out_w;
                for oy in 0..out_h {
                    let iy0 = (oy * stride) as isize - pad as isize;
                    let ky_lo = (-iy0).max(0) as usize;
                    let ky_hi = kh.min((h_in as isize - iy0).max(0) as usize);
                    for ox in 0..out_w {
                        let ix0 = (ox * stride) as isize - pad as isize;
                        let kx_lo = (-ix0).max(0) as usize;
                        let kx_hi = kw.min((w_in as isize - ix0).max(0) as usize);
                        let ix_lo = (ix0 + kx_lo as isize) as usize;
                        let span = kx_hi.saturating_sub(kx_lo);
                        let gv = gd[g_base + oy * out_w + ox];
                        for ci in 0..cpg {
                            let x_plane = (ci0 + ci) * h_in * w_in;
                            let w_chan = w_base + ci * kh * kw;
                            for ky in ky_lo..ky_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let xs = &xd[x_plane + iy * w_in + ix_lo..][..span];
                                let ts = &mut td[w_chan + ky * kw + kx_lo..][..span];
                                for (tv, xv) in ts.iter_mut().zip(xs) {
                                    *tv += gv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }

        {
            let t = grads[x.0].get_or_insert_with(|| Tensor::zeros(vx.shape()));
            let td = t.data_mut();
            for co in 0..c_out {
                let ci0 = (co / out_per_group) * cpg;
                let w_base = co * cpg * kh * kw;
                let g_base = co * out_h * out_w;
                for oy in 0..out_h {
                    let iy0 = (oy * stride) as isize - pad as isize;
                    let ky_lo = (-iy0).max(0) as usize;
                    let ky_hi = kh.min((h_in as isize - iy0).max(0) as usize);
                    for ox in 0..out_w {
                        let ix0 = (ox * stride) as isize - pad as isize;
                        let kx_lo = (-ix0).max(0) as usize;
                        let kx_hi = kw.min((w_in as isize - ix0).max(0) as usize);
                        let ix_lo = (ix0 + kx_lo as isize) as usize;
                        let span = kx_hi.saturating_sub(kx_lo);
                        let gv = gd[g_base + oy * out_w + ox];
                        for ci in 0..cpg {
                            let x_plane = (ci0 + ci) * h_in * w_in;
                            let w_chan = w_base + ci * kh * kw;
                            for ky in ky_lo..ky_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let ts = &mut td[x_plane + iy * w_in + ix_lo..][..span];
                                let ws = &wd[w_chan + ky * kw + kx_lo..][..span];
                                for (tv, wv) in ts.iter_mut().zip(ws) {
                                    *tv += gv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // -- kink inspection ------------------------------------------------------

    /// Minimum |pre-activation| over all rectifier (relu / leaky_relu) inputs;
    /// infinity when the graph has none. Gradient checks use this to stay
    /// away from the non-differentiable kinks.
    pub fn rectifier_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            let parent = match node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => x,
                _ => continue,
            };
            for v in self.nodes[parent.0].value.data() {
                margin = margin.min(v.abs());
            }
        }
        margin
    }

    /// Sign pattern (`> 0`) of every rectifier input, in tape order. Two
    /// forward passes with the same pattern share the same active linear
    /// region.
    pub fn rectifier_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            let parent = match node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => x,
                _ => continue,
            };
            signs.extend(self.nodes[parent.0].value.data().iter().map(|v| *v > 0.0));
        }
        signs
    }
}

fn shape_error(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::InvalidInput(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}
