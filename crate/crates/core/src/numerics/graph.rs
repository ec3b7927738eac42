//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the recording
//! order is already a topological order and `backward` is a single reverse
//! sweep. Nodes are addressed by [`Var`] handles that are only meaningful for
//! the graph that created them.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{MadtError, Result};

/// Finite stand-in for −∞ in additive masks.
pub const MASK_VALUE: f64 = -1e9;

/// Variance guard inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Whether an additive mask entry (or a logit carrying one) marks an excluded slot.
#[inline]
pub fn is_masked(v: f64) -> bool {
    v <= MASK_VALUE * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Reshape(Var),
    Permute { a: Var, perm: Vec<usize> },
    MaskedSoftmax(Var),
    MaskedLogSoftmax { a: Var, masked: Vec<bool> },
    Gather { a: Var, index: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> MadtError {
    MadtError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a dense vector, zeros when nothing flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.numel()],
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched matrix product `[B×m×k] · [B×k×n] -> [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..bs {
                kernels::gemm_nn(
                    &da[i * m * k..(i + 1) * m * k],
                    &db[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let t = Tensor::new(vec![bs, m, n], out)?;
        Ok(self.push(t, Op::BatchMatMul(a, b), &[a, b]))
    }

    /// Affine map over the trailing axis: `x[.., in] · W[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 || *sx.last().unwrap() != sw[0] {
            return Err(dim_err("linear", &sx, &sw));
        }
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [sw[1]] {
                return Err(dim_err("linear bias", sb, &sw));
            }
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).numel() / k;
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm_nn(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let inputs: Vec<Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let c = self.constant(c);
        self.add(a, c)
    }

    /// Multiplies elementwise by a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let c = self.constant(c);
        self.mul(a, c)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        self.push(t, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::ln);
        self.push(t, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(a, |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp { a, lo, hi }, &[a])
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let t = self.zip_map(a, b, |x, y| if x <= y { x } else { y });
        Ok(self.push(t, Op::Minimum(a, b), &[a, b]))
    }

    /// Normalizes over the trailing axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| dim_err("layer_norm", &sx, &[]))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err("layer_norm", &sx, self.shape(gain)));
        }
        let rows = self.value(x).numel() / d;
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        {
            let xd = self.value(x).data();
            let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gd[j] + bd[j];
                }
            }
        }
        let t = Tensor::new(sx, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Concatenation along the trailing axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MadtError::Contract("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat", self.shape(*first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `[start, start+len)` of the trailing axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let w = *sa.last().ok_or_else(|| dim_err("slice", &sa, &[]))?;
        if start + len > w {
            return Err(dim_err("slice", &sa, &[start, len]));
        }
        let rows = self.value(a).numel() / w;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * w + start..r * w + start + len]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Slice { a, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        let mut seen = vec![false; sa.len()];
        if perm.len() != sa.len() || perm.iter().any(|&p| p >= sa.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err("permute", sa, perm));
        }
        let (out, shape) = kernels::permute(self.value(a).data(), sa, perm);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            &[a],
        ))
    }

    fn check_mask(&self, op: &'static str, a: Var, mask: &Tensor) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sm = mask.shape();
        if sa.is_empty() || sm.len() > sa.len() || sa[sa.len() - sm.len()..] != *sm || sm.is_empty() {
            return Err(dim_err(op, sa, sm));
        }
        let n = *sa.last().unwrap();
        Ok((n, mask.numel() / n))
    }

    /// Softmax over the trailing axis after adding `mask`.
    ///
    /// `mask` has the trailing shape of `a` and is broadcast over the leading
    /// axes. Entries at or below `MASK_VALUE / 2` are excluded and their
    /// probability is exactly 0. A row with no admissible entry is an error.
    pub fn masked_softmax(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let (n, mask_rows) = self.check_mask("masked_softmax", a, mask)?;
        let src = self.value(a).data();
        let md = mask.data();
        let rows = src.len() / n;
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let m = &md[(r % mask_rows) * n..(r % mask_rows + 1) * n];
            let x = &src[r * n..(r + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if !is_masked(m[j]) {
                    max = max.max(x[j] + m[j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(MadtError::NoLegal(format!("softmax row {r} is fully masked")));
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for j in 0..n {
                if !is_masked(m[j]) {
                    let e = (x[j] + m[j] - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::MaskedSoftmax(a), &[a]))
    }

    /// Log-probabilities of the masked softmax. Excluded slots hold `MASK_VALUE`.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let (n, mask_rows) = self.check_mask("masked_log_softmax", a, mask)?;
        let src = self.value(a).data();
        let md = mask.data();
        let rows = src.len() / n;
        let mut out = vec![MASK_VALUE; src.len()];
        let mut masked = vec![false; src.len()];
        for r in 0..rows {
            let m = &md[(r % mask_rows) * n..(r % mask_rows + 1) * n];
            let x = &src[r * n..(r + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                let excluded = is_masked(m[j]) || is_masked(x[j]);
                masked[r * n + j] = excluded;
                if !excluded {
                    max = max.max(x[j] + m[j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(MadtError::NoLegal(format!(
                    "log-softmax row {r} is fully masked"
                )));
            }
            let mut sum = 0.0;
            for j in 0..n {
                if !masked[r * n + j] {
                    sum += (x[j] + m[j] - max).exp();
                }
            }
            let lse = max + sum.ln();
            for j in 0..n {
                if !masked[r * n + j] {
                    out[r * n + j] = x[j] + m[j] - lse;
                }
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::MaskedLogSoftmax { a, masked }, &[a]))
    }

    /// Picks one entry per trailing-axis row.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let n = *sa.last().ok_or_else(|| dim_err("gather", &sa, &[]))?;
        let rows = self.value(a).numel() / n;
        if index.len() != rows || index.iter().any(|&i| i >= n) {
            return Err(dim_err("gather", &sa, &[index.len()]));
        }
        let src = self.value(a).data();
        let out: Vec<f64> = index.iter().enumerate().map(|(r, &i)| src[r * n + i]).collect();
        let t = Tensor::new(sa[..sa.len() - 1].to_vec(), out)?;
        Ok(self.push(
            t,
            Op::Gather {
                a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a one-element `loss`. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(MadtError::Contract("backward called twice on one graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(MadtError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            for (v, delta) in contributions {
                self.accumulate(v, delta);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (x, d) in g.iter_mut().zip(delta) {
                    *x += d;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_nt(g, val(*b), &mut da, m, n, k);
                    res.push((*a, da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_tn(val(*a), g, &mut db, m, k, n);
                    res.push((*b, db));
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for s in 0..bs {
                        kernels::gemm_nt(
                            &g[s * m * n..(s + 1) * m * n],
                            &vb[s * k * n..(s + 1) * k * n],
                            &mut da[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    res.push((*a, da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for s in 0..bs {
                        kernels::gemm_tn(
                            &va[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut db[s * k * n..(s + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    res.push((*b, db));
                }
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (k, n) = (sw[0], sw[1]);
                let m = g.len() / n;
                if wants(*x) {
                    let mut dx = vec![0.0; m * k];
                    kernels::gemm_nt(g, val(*w), &mut dx, m, n, k);
                    res.push((*x, dx));
                }
                if wants(*w) {
                    let mut dw = vec![0.0; k * n];
                    kernels::gemm_tn(val(*x), g, &mut dw, m, k, n);
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        res.push((*b, db));
                    }
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    res.push((*a, g.iter().zip(val(*b)).map(|(x, y)| x * y).collect()));
                }
                if wants(*b) {
                    res.push((*b, g.iter().zip(val(*a)).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Scale(a, f) => res.push((*a, g.iter().map(|x| x * f).collect())),
            Op::Relu(a) => res.push((
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                    .collect(),
            )),
            Op::Exp(a) => res.push((*a, g.iter().zip(out).map(|(d, y)| d * y).collect())),
            Op::Log(a) => res.push((*a, g.iter().zip(val(*a)).map(|(d, x)| d / x).collect())),
            Op::Square(a) => {
                res.push((*a, g.iter().zip(val(*a)).map(|(d, x)| 2.0 * x * d).collect()))
            }
            Op::Clamp { a, lo, hi } => res.push((
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&d, &x)| if x >= *lo && x <= *hi { d } else { 0.0 })
                    .collect(),
            )),
            Op::Minimum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for j in 0..g.len() {
                    if va[j] <= vb[j] {
                        da[j] = g[j];
                    } else {
                        db[j] = g[j];
                    }
                }
                res.push((*a, da));
                res.push((*b, db));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gd = val(*gain);
                let d = gd.len();
                let rows = g.len() / d;
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * hr[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                res.push((*x, dx));
                res.push((*gain, dgain));
                res.push((*bias, dbias));
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.last_dim();
                    if wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        res.push((p, dp));
                    }
                    offset += w;
                }
            }
            Op::Slice { a, start } => {
                let w = self.nodes[a.0].value.last_dim();
                let len = node.value.last_dim();
                let rows = g.len() / len.max(1);
                let mut da = vec![0.0; rows * w];
                for r in 0..rows {
                    da[r * w + start..r * w + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                res.push((*a, da));
            }
            Op::Reshape(a) => res.push((*a, g.to_vec())),
            Op::Permute { a, perm } => {
                let (da, _) = kernels::permute(g, node.value.shape(), &kernels::inverse_perm(perm));
                res.push((*a, da));
            }
            Op::MaskedSoftmax(a) => {
                let n = node.value.last_dim();
                let mut da = vec![0.0; g.len()];
                for ((dr, gr), pr) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: f64 = gr.iter().zip(pr).map(|(x, p)| x * p).sum();
                    for j in 0..n {
                        dr[j] = pr[j] * (gr[j] - dot);
                    }
                }
                res.push((*a, da));
            }
            Op::MaskedLogSoftmax { a, masked } => {
                let n = node.value.last_dim();
                let mut da = vec![0.0; g.len()];
                for r in 0..g.len() / n {
                    let span = r * n..(r + 1) * n;
                    let gsum: f64 = g[span.clone()]
                        .iter()
                        .zip(&masked[span.clone()])
                        .filter(|(_, &m)| !m)
                        .map(|(x, _)| x)
                        .sum();
                    for j in span {
                        if !masked[j] {
                            da[j] = g[j] - out[j].exp() * gsum;
                        }
                    }
                }
                res.push((*a, da));
            }
            Op::Gather { a, index } => {
                let n = self.nodes[a.0].value.last_dim();
                let mut da = vec![0.0; index.len() * n];
                for (r, &i) in index.iter().enumerate() {
                    da[r * n + i] = g[r];
                }
                res.push((*a, da));
            }
            Op::Sum(a) => res.push((*a, vec![g[0]; self.nodes[a.0].value.numel()])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                res.push((*a, vec![g[0] / n.max(1) as f64; n]));
            }
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let col = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let d = g.matmul(row, col).unwrap();
        assert_eq!(g.value(d).shape(), &[1, 1]);
        assert_eq!(g.value(d).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, MadtError::Dimension { .. }));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let p = g.masked_softmax(a, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);

        let b = g.constant(Tensor::vector(vec![5.0, 1.0]));
        let q = g
            .masked_softmax(b, &Tensor::vector(vec![0.0, f64::NEG_INFINITY]))
            .unwrap();
        assert_eq!(g.value(q).data(), &[1.0, 0.0]);

        let q2 = g.masked_softmax(b, &Tensor::vector(vec![0.0, MASK_VALUE])).unwrap();
        assert_eq!(g.value(q2).data(), &[1.0, 0.0]);

        // Oracle values from an independent high-precision evaluation of
        // exp(x_i) / sum_j exp(x_j) for x = [1, 2, 3].
        let c = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let r = g.masked_softmax(c, &Tensor::zeros(vec![3])).unwrap();
        assert!(close(
            g.value(r).data(),
            &[0.090_030_573_170_380_458, 0.244_728_471_054_797_65, 0.665_240_955_774_821_89],
            1e-12
        ));
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let err = g
            .masked_softmax(a, &Tensor::vector(vec![MASK_VALUE, MASK_VALUE]))
            .unwrap_err();
        assert!(matches!(err, MadtError::NoLegal(_)));
        assert!(err.to_string().contains("no legal entry"));
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let x0 = g.constant(Tensor::zeros(vec![1, 3]));
        let w = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.5, -0.25]));
        let y = g.linear(x0, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -0.25]);

        let c = g.constant(Tensor::filled(vec![4], 3.0));
        let gain = g.constant(Tensor::filled(vec![4], 1.0));
        let bias = g.constant(Tensor::zeros(vec![4]));
        let n = g.layer_norm(c, gain, bias).unwrap();
        assert_eq!(g.value(n).data(), &[0.0; 4]);
    }

    #[test]
    fn add_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2]));
        let b = g.constant(Tensor::zeros(vec![3]));
        assert!(matches!(g.add(a, b), Err(MadtError::Dimension { .. })));
    }

    #[test]
    fn backward_requires_scalar_and_runs_once() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn gradient_accumulates_over_shared_uses() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0]));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0]));
        let c = g.constant(Tensor::vector(vec![2.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }
}
