use std::sync::Arc;

use super::kernels::{self, add_assign, sigmoid, softplus};
use super::sparse::{scaled_add, CsrMatrix, NeighborLists};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout(Var, Vec<f64>),
    SoftmaxRows(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    LogitEntropy(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SpMM(Arc<CsrMatrix>, Var),
    Gat {
        h: Var,
        att_src: Var,
        att_dst: Var,
        nbrs: Arc<NeighborLists>,
        pre: Vec<f64>,
        alpha: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Node `i` only ever references nodes `< i`, so reverse index order is a
/// valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn out(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(value, op, needs)
    }

    /// Records a leaf; gradients are kept iff `t.requires_grad`.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let needs = t.requires_grad;
        if needs && t.grad.is_none() {
            t.grad = Some(vec![0.0; t.numel()]);
        }
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.value.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.value(a).shape.clone(),
                right: self.value(b).shape.clone(),
            });
        }
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.out(vec![m, n], data, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (n, k2) = dims2(self.value(b));
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                left: self.value(a).shape.clone(),
                right: self.value(b).shape.clone(),
            });
        }
        let data = kernels::matmul_nt(self.data(a), self.data(b), m, k, n);
        Ok(self.out(vec![m, n], data, Op::MatMulNT(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::Dimension {
                op,
                left: self.value(a).shape.clone(),
                right: self.value(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.out(shape, data, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if self.value(b).numel() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                left: self.value(x).shape.clone(),
                right: self.value(b).shape.clone(),
            });
        }
        let bias = self.data(b);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(n) {
            add_assign(row, bias);
        }
        Ok(self.out(vec![m, n], data, Op::AddBias(x, b), &[x, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.out(shape, data, Op::Mul(a, b), &[a, b]))
    }

    /// Scales row `i` of `x[m×n]` by `c[i]`, with `c` of length `m`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if self.value(c).numel() != m {
            return Err(Error::Dimension {
                op: "mul_col",
                left: self.value(x).shape.clone(),
                right: self.value(c).shape.clone(),
            });
        }
        let scales = self.data(c).to_vec();
        let mut data = self.data(x).to_vec();
        for (row, s) in data.chunks_mut(n).zip(&scales) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.out(vec![m, n], data, Op::MulCol(x, c), &[x, c]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.value(a).shape.clone();
        self.out(shape, data, Op::Scale(a, factor), &[a])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape.clone();
        self.out(shape, data, op, &[a])
    }

    /// `x · σ(x)`
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Inverted dropout. Returns `a` itself in eval mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut Stream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .data(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.out(shape, data, Op::Dropout(a, mask), &[a]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.value(a));
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.out(vec![m, n], data, Op::SoftmaxRows(a), &[a])
    }

    /// Column means of `[m×n]`, shape `[1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.value(a));
        let mut data = vec![0.0; n];
        for row in self.data(a).chunks(n) {
            add_assign(&mut data, row);
        }
        let inv = 1.0 / m as f64;
        data.iter_mut().for_each(|x| *x *= inv);
        self.out(vec![1, n], data, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.out(vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.data(a).iter().sum::<f64>() / n;
        self.out(vec![1], vec![s], Op::Mean(a), &[a])
    }

    /// Mean binary entropy of `σ(a)`, taking logits `a`.
    pub fn logit_entropy_mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self
            .data(a)
            .iter()
            .map(|&m| softplus(m) - m * sigmoid(m))
            .sum::<f64>()
            / n;
        self.out(vec![1], vec![s], Op::LogitEntropy(a), &[a])
    }

    /// Rows `[start, end)` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        if start >= end || end > m {
            return Err(Error::Index {
                what: "row slice",
                index: end,
                bound: m,
            });
        }
        let data = self.data(a)[start * n..end * n].to_vec();
        Ok(self.out(vec![end - start, n], data, Op::SliceRows(a, start), &[a]))
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        if start >= end || end > n {
            return Err(Error::Index {
                what: "column slice",
                index: end,
                bound: n,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in self.data(a).chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(self.out(vec![m, w], data, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::Parameter("concat of zero tensors".into())),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, c) = dims2(self.value(p));
            if c != n {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: vec![rows, n],
                    right: self.value(p).shape.clone(),
                });
            }
            rows += m;
            data.extend_from_slice(self.data(p));
        }
        Ok(self.out(vec![rows, n], data, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// `mat · x` for a fixed sparse matrix.
    pub fn spmm(&mut self, mat: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if mat.cols != m {
            return Err(Error::Dimension {
                op: "spmm",
                left: vec![mat.rows, mat.cols],
                right: self.value(x).shape.clone(),
            });
        }
        let data = mat.mul_dense(self.data(x), n);
        Ok(self.out(vec![mat.rows, n], data, Op::SpMM(Arc::clone(mat), x), &[x]))
    }

    /// Neighborhood attention: for each target `v`,
    /// `e(u→v) = LeakyReLU(⟨h_u, att_src⟩ + ⟨h_v, att_dst⟩) + log_weight(u→v)`,
    /// `α = softmax over u`, `out_v = Σ α(u→v) h_u`.
    pub fn graph_attention(
        &mut self,
        h: Var,
        att_src: Var,
        att_dst: Var,
        nbrs: &Arc<NeighborLists>,
    ) -> Result<Var> {
        let (m, d) = dims2(self.value(h));
        if nbrs.nodes != m
            || self.value(att_src).numel() != d
            || self.value(att_dst).numel() != d
        {
            return Err(Error::Dimension {
                op: "graph_attention",
                left: self.value(h).shape.clone(),
                right: vec![nbrs.nodes, self.value(att_src).numel()],
            });
        }
        let hd = self.data(h);
        let src_score: Vec<f64> = hd.chunks(d).map(|r| dot(r, self.data(att_src))).collect();
        let dst_score: Vec<f64> = hd.chunks(d).map(|r| dot(r, self.data(att_dst))).collect();
        let e = nbrs.sources.len();
        let mut pre = vec![0.0; e];
        let mut alpha = vec![0.0; e];
        let mut out = vec![0.0; m * d];
        for v in 0..m {
            let range = nbrs.range(v);
            for k in range.clone() {
                pre[k] = src_score[nbrs.sources[k]] + dst_score[v];
                alpha[k] = leaky(pre[k]) + nbrs.log_weights[k];
            }
            softmax_in_place(&mut alpha[range.clone()]);
            let dst = &mut out[v * d..(v + 1) * d];
            for k in range {
                let u = nbrs.sources[k];
                scaled_add(dst, &hd[u * d..(u + 1) * d], alpha[k]);
            }
        }
        let op = Op::Gat {
            h,
            att_src,
            att_dst,
            nbrs: Arc::clone(nbrs),
            pre,
            alpha,
        };
        Ok(self.out(vec![m, d], out, op, &[h, att_src, att_dst]))
    }

    /// Attention coefficients cached by a [`Tape::graph_attention`] node.
    pub fn attention_coefficients(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Gat { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = dims2(self.value(logits));
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.value(logits).shape.clone(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: k,
            });
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            let (imax, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != imax)
                .map(|(_, &x)| (x - max).exp())
                .sum();
            let log_norm = rest.ln_1p();
            loss += (max - row[label]) + log_norm;
            let lse = max + log_norm;
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        loss /= b as f64;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.out(vec![1], vec![loss], op, &[logits]))
    }

    /// Backpropagates from a scalar, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_updates = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, g, &mut grads, &mut leaf_updates);
        }
        for (idx, g) in leaf_updates {
            if let Some(acc) = self.nodes[idx].value.grad.as_mut() {
                add_assign(acc, &g);
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        leaf_updates: &mut Vec<(usize, Vec<f64>)>,
    ) {
        let node = &self.nodes[idx];
        let y = &node.value.data;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => add_assign(acc, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => leaf_updates.push((idx, g)),
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).cols();
                if needs(a) {
                    send(*a, kernels::matmul_nt(&g, self.data(*b), m, n, k));
                }
                if needs(b) {
                    send(*b, kernels::matmul_tn(self.data(*a), &g, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).rows();
                if needs(a) {
                    send(*a, kernels::matmul(&g, self.data(*b), m, n, k));
                }
                if needs(b) {
                    send(*b, kernels::matmul_tn(&g, self.data(*a), m, n, k));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    send(*a, g.clone());
                }
                send(*b, g);
            }
            Op::AddBias(x, b) => {
                let n = self.value(*x).cols();
                if needs(b) {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_assign(&mut gb, row);
                    }
                    send(*b, gb);
                }
                send(*x, g);
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let ga = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                    send(*a, ga);
                }
                if needs(b) {
                    let gb = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                    send(*b, gb);
                }
            }
            Op::MulCol(x, c) => {
                let n = self.value(*x).cols();
                let xd = self.data(*x);
                let cd = self.data(*c);
                if needs(c) {
                    let gc = g
                        .chunks(n)
                        .zip(xd.chunks(n))
                        .map(|(gr, xr)| dot(gr, xr))
                        .collect();
                    send(*c, gc);
                }
                if needs(x) {
                    let mut gx = g;
                    for (row, s) in gx.chunks_mut(n).zip(cd) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    send(*x, gx);
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|x| x * f).collect()),
            Op::Silu(a) => {
                let gx = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                send(*a, gx);
            }
            Op::Sigmoid(a) => send(*a, g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()),
            Op::Tanh(a) => send(*a, g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect()),
            Op::Dropout(a, mask) => send(*a, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::SoftmaxRows(a) => {
                let n = self.value(*a).cols();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let inner = dot(gr, yr);
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - inner);
                    }
                }
                send(*a, gx);
            }
            Op::MeanRows(a) => {
                let (m, _) = dims2(self.value(*a));
                let inv = 1.0 / m as f64;
                let row: Vec<f64> = g.iter().map(|x| x * inv).collect();
                send(*a, row.repeat(m));
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::LogitEntropy(a) => {
                let n = self.value(*a).numel() as f64;
                let gx = self
                    .data(*a)
                    .iter()
                    .map(|&m| {
                        let s = sigmoid(m);
                        -g[0] * m * s * (1.0 - s) / n
                    })
                    .collect();
                send(*a, gx);
            }
            Op::SliceRows(a, start) => {
                let n = self.value(*a).cols();
                let mut gx = vec![0.0; self.value(*a).numel()];
                gx[start * n..start * n + g.len()].copy_from_slice(&g);
                send(*a, gx);
            }
            Op::SliceCols(a, start) => {
                let n = self.value(*a).cols();
                let w = node.value.cols();
                let mut gx = vec![0.0; self.value(*a).numel()];
                for (dst, src) in gx.chunks_mut(n).zip(g.chunks(w)) {
                    dst[*start..start + w].copy_from_slice(src);
                }
                send(*a, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    send(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SpMM(mat, x) => {
                let n = self.value(*x).cols();
                send(*x, mat.mul_dense_transposed(&g, n));
            }
            Op::Gat {
                h,
                att_src,
                att_dst,
                nbrs,
                pre,
                alpha,
            } => {
                let (m, d) = dims2(self.value(*h));
                let hd = self.data(*h);
                let mut gh = vec![0.0; m * d];
                let mut g_src = vec![0.0; m];
                let mut g_dst = vec![0.0; m];
                let mut d_alpha = Vec::new();
                for v in 0..m {
                    let range = nbrs.range(v);
                    let gv = &g[v * d..(v + 1) * d];
                    d_alpha.clear();
                    for k in range.clone() {
                        let u = nbrs.sources[k];
                        let hu = &hd[u * d..(u + 1) * d];
                        scaled_add(&mut gh[u * d..(u + 1) * d], gv, alpha[k]);
                        d_alpha.push(dot(gv, hu));
                    }
                    let inner: f64 = range
                        .clone()
                        .zip(&d_alpha)
                        .map(|(k, da)| alpha[k] * da)
                        .sum();
                    for (k, da) in range.zip(&d_alpha) {
                        let de = alpha[k] * (da - inner);
                        let dz = if pre[k] > 0.0 { de } else { de * LEAKY_SLOPE };
                        g_src[nbrs.sources[k]] += dz;
                        g_dst[v] += dz;
                    }
                }
                let a_src = self.data(*att_src);
                let a_dst = self.data(*att_dst);
                for v in 0..m {
                    let row = &mut gh[v * d..(v + 1) * d];
                    scaled_add(row, a_src, g_src[v]);
                    scaled_add(row, a_dst, g_dst[v]);
                }
                if needs(att_src) {
                    let mut ga = vec![0.0; d];
                    for v in 0..m {
                        scaled_add(&mut ga, &hd[v * d..(v + 1) * d], g_src[v]);
                    }
                    send(*att_src, ga);
                }
                if needs(att_dst) {
                    let mut ga = vec![0.0; d];
                    for v in 0..m {
                        scaled_add(&mut ga, &hd[v * d..(v + 1) * d], g_dst[v]);
                    }
                    send(*att_dst, ga);
                }
                send(*h, gh);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, k) = dims2(self.value(*logits));
                let scale = g[0] / b as f64;
                let mut gx = probs.clone();
                for (row, &label) in gx.chunks_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|x| *x *= scale);
                }
                send(*logits, gx);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|x| *x *= inv);
}
