use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Node order is a topological order.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Non-finite checks follow `debug_assertions`.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: None,
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Gradient of a leaf marked `requires_grad`, available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.as_ref()?;
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let data = grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Some(Tensor::new(node.value.shape(), data).expect("grad shape mirrors value"))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.dims2().map_err(|_| Error::shape(op, t.shape(), &[0, 0]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push(Tensor::new(&[m, n], data)?, Op::AddRow(x, bias), &[x, bias])
    }

    /// `x · w + b`, the affine map of a linear layer.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        self.push(value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = softmax_values(self.value(x), axis)?;
        self.push(value, Op::Softmax { x, axis }, &[x])
    }

    /// Normalises each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.value(x);
        let n = *xs.shape().last().ok_or_else(|| {
            Error::InvalidArgument("layer_norm needs at least one axis".into())
        })?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::shape("layer_norm", xs.shape(), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xs.numel() / n.max(1);
        let mut xhat = vec![0.0; xs.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.numel()];
        for (r, row) in xs.data().chunks_exact(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let denom = var + eps;
            let inv = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            rstd[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(xs.shape(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * std_normal_cdf(v)).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(&[rows, n], data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(&[m, total], data)?;
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start > end || end > n {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, end]));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let value = Tensor::new(&[m, w], data)?;
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    /// Rows of a matrix picked by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape("gather_rows", self.shape(x), &[bad]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(&[rows.len(), n], data)?;
        self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `−log softmax(logits)[label]` via log-sum-exp. `logits` holds one row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - z[label];
        let probs = exps.iter().map(|e| e / total).collect();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. A tape may be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Backward("tape has already been differentiated".into()));
        }
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Backward(
                "loss is detached from every requires_grad leaf".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, |da| gemm_nt(m, n, k, g, bv, da));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, |db| gemm_tn(k, m, n, av, g, db));
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a·bᵀ with a [m×k], b [n×k]
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[0];
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, |da| gemm_nn(m, n, k, g, bv, da));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, |db| gemm_tn(n, m, k, g, av, db));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        self.accumulate(grads, v, |d| kernels::axpy(1.0, g, d));
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, |d| kernels::axpy(1.0, g, d));
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).numel();
                    self.accumulate(grads, *bias, |d| {
                        for row in g.chunks_exact(n) {
                            kernels::axpy(1.0, row, d);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, |d| {
                        for ((dv, gv), bv) in d.iter_mut().zip(g).zip(bv) {
                            *dv += gv * bv;
                        }
                    });
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, |d| {
                        for ((dv, gv), av) in d.iter_mut().zip(g).zip(av) {
                            *dv += gv * av;
                        }
                    });
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, |d| kernels::axpy(*factor, g, d));
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let gt = kernels::transpose(c, r, g);
                self.accumulate(grads, *x, |d| kernels::axpy(1.0, &gt, d));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |d| kernels::axpy(1.0, g, d));
            }
            Op::Softmax { x, axis } => {
                let (outer, extent, inner) = split_axis(out.shape(), *axis).unwrap();
                let y = out.data();
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * extent * inner + j * inner + i;
                            let dotp: f64 = (0..extent).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..extent {
                                d[at(j)] += y[at(j)] * (g[at(j)] - dotp);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, |d| {
                        for (r, inv) in rstd.iter().enumerate() {
                            let gr = &g[r * n..(r + 1) * n];
                            let hr = &xhat[r * n..(r + 1) * n];
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..n {
                                let dh = gr[j] * gv[j];
                                mean_dh += dh;
                                mean_dh_h += dh * hr[j];
                            }
                            mean_dh /= n as f64;
                            mean_dh_h /= n as f64;
                            for j in 0..n {
                                let dh = gr[j] * gv[j];
                                d[r * n + j] += inv * (dh - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                    });
                }
                if self.requires_grad(*gain) {
                    self.accumulate(grads, *gain, |d| {
                        for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for j in 0..n {
                                d[j] += gr[j] * hr[j];
                            }
                        }
                    });
                }
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, |d| {
                        for gr in g.chunks_exact(n) {
                            kernels::axpy(1.0, gr, d);
                        }
                    });
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for ((dv, gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        *dv += gv * (std_normal_cdf(v) + v * std_normal_pdf(v));
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.requires_grad(p) {
                        let slice = &g[offset..offset + len];
                        self.accumulate(grads, p, |d| kernels::axpy(1.0, slice, d));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, |d| {
                            for i in 0..m {
                                let src = &g[i * total + offset..i * total + offset + w];
                                kernels::axpy(1.0, src, &mut d[i * w..(i + 1) * w]);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2().unwrap();
                let w = out.shape()[1];
                self.accumulate(grads, *x, |d| {
                    for i in 0..m {
                        let dst = &mut d[i * n + start..i * n + start + w];
                        kernels::axpy(1.0, &g[i * w..(i + 1) * w], dst);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let n = self.value(*x).shape()[1];
                self.accumulate(grads, *x, |d| {
                    for (k, &r) in rows.iter().enumerate() {
                        kernels::axpy(1.0, &g[k * n..(k + 1) * n], &mut d[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Mean(x) => {
                let scale = g[0] / self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|v| *v += scale));
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                self.accumulate(grads, *logits, |d| {
                    for (j, (dv, p)) in d.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        *dv += g[0] * (p - onehot);
                    }
                });
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.requires_grad(v) {
            return;
        }
        let numel = self.value(v).numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; numel]);
        f(slot);
    }
}

pub(crate) fn softmax_values(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, extent, inner) = split_axis(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * extent * inner + j * inner + i;
            let max = (0..extent).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..extent {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..extent {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

#[inline]
pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
