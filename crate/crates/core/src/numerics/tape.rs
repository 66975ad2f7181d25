use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use statrs::function::erf::erf;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Gelu,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `broadcast`: `b` is a vector of length `last_dim(a)` applied to every row.
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Transpose(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    PowerNormalize {
        a: Var,
        divisor: f64,
        rms: f64,
    },
    StraightThrough(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![*a, *b],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::Softmax(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::SliceCols { a, .. }
            | Op::Sum(a)
            | Op::PowerNormalize { a, .. }
            | Op::StraightThrough(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of a forward computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended as ops execute, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if `v` was not reached from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, with zeros for unreachable values.
    pub fn get_or_zero(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.sizes[v.0]],
        }
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    fn mat_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Dimension(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
            )));
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        check_finite("matmul", &out)?;
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let broadcast = if sa == sb {
            false
        } else {
            let n = *sa.last().unwrap();
            let vector_like = sb.iter().product::<usize>() == n
                && sb.last() == Some(&n)
                && sb[..sb.len() - 1].iter().all(|&d| d == 1);
            if !vector_like {
                return Err(Error::Dimension(format!(
                    "{kind:?}: shapes {sa:?} and {sb:?} are not compatible"
                )));
            }
            true
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n = bv.len();
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let out: Vec<f64> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i % n])).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        check_finite("elementwise", &out)?;
        Ok(self.push(
            Tensor::raw(sa, out),
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
        ))
    }

    /// `a + b`; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let f = match kind {
            UnaryKind::Gelu => gelu,
            UnaryKind::Tanh => f64::tanh,
        };
        let v = self.value(a);
        let out: Vec<f64> = v.data().iter().map(|&x| f(x)).collect();
        check_finite("elementwise", &out)?;
        let shape = v.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Unary(kind, a)))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a);
        let out: Vec<f64> = v.data().iter().map(|&x| x * c).collect();
        check_finite("scale", &out)?;
        let shape = v.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Scale(a, c)))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let k = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        check_finite("softmax", &out)?;
        let shape = v.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Softmax(a)))
    }

    /// Per-row normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract("layernorm eps must be positive".into()));
        }
        let d = self.value(x).last_dim();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::Dimension(format!(
                "layernorm gain/bias must have {d} entries"
            )));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        check_finite("layernorm", &out)?;
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.mat_dims(a, "transpose")?;
        let v = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        Ok(self.push(Tensor::raw(vec![c, r], out), Op::Transpose(a)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.mat_dims(a, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} out of range for {c} columns"
            )));
        }
        let v = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        Ok(self.push(Tensor::raw(vec![r, w], out), Op::SliceCols { a, start }))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.mat_dims(p, "concat_cols")?);
        }
        let r = dims[0].0;
        if dims.iter().any(|d| d.0 != r) {
            return Err(Error::Dimension(format!("concat row counts differ: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(Tensor::raw(vec![r, total], out), Op::ConcatCols(parts.to_vec())))
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        check_finite("sum", &[s])?;
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Rescales `a` so that `Σ a² / divisor == 1`.
    ///
    /// With `divisor = M` and `a` holding `M` complex values as real pairs, the
    /// mean complex power becomes exactly 1.
    pub fn power_normalize(&mut self, a: Var, divisor: f64) -> Result<Var> {
        if divisor <= 0.0 {
            return Err(Error::Contract("power divisor must be positive".into()));
        }
        let v = self.value(a);
        let energy: f64 = v.data().iter().map(|x| x * x).sum();
        if energy == 0.0 {
            return Err(Error::NonFinite {
                op: "power_normalize",
            });
        }
        let rms = (energy / divisor).sqrt();
        let out: Vec<f64> = v.data().iter().map(|x| x / rms).collect();
        check_finite("power_normalize", &out)?;
        let shape = v.shape().to_vec();
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::PowerNormalize { a, divisor, rms },
        ))
    }

    /// Forward value `hard`, gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::Dimension("straight-through shapes differ".into()));
        }
        Ok(self.push(hard, Op::StraightThrough(soft)))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every node is visited once, in reverse recording order. Values that do
    /// not require gradients, or that the loss does not depend on, get `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let sizes = self.nodes.iter().map(|n| n.value.numel()).collect();
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads, sizes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(a) {
                    let da = matmul_nt(g, self.value(*b).data(), m, n, k);
                    accumulate(&mut grads[a.0], da);
                }
                if wants(b) {
                    let db = matmul_tn(self.value(*a).data(), g, m, k, n);
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = bv.len();
                if wants(a) {
                    let da: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => {
                            g.iter().enumerate().map(|(i, gi)| gi * bv[i % n]).collect()
                        }
                    };
                    accumulate(&mut grads[a.0], da);
                }
                if wants(b) {
                    let sign = if *kind == BinaryKind::Sub { -1.0 } else { 1.0 };
                    let mut db = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        let term = match kind {
                            BinaryKind::Mul => gi * av[i],
                            _ => sign * gi,
                        };
                        if *broadcast {
                            db[i % n] += term;
                        } else {
                            db[i] = term;
                        }
                    }
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = match kind {
                    UnaryKind::Gelu => x.iter().zip(g).map(|(&x, gi)| gi * gelu_grad(x)).collect(),
                    UnaryKind::Tanh => node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(y, gi)| gi * (1.0 - y * y))
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.iter().map(|gi| gi * c).collect());
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let k = node.value.last_dim();
                let mut da = vec![0.0; y.len()];
                for ((dr, yr), gr) in da.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if wants(x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for r in 0..inv_std.len() {
                        let xr = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let c = inv_std[r] / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = c * (d as f64 * dxhat[j] - s1 - xr[j] * s2);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                if wants(gain) {
                    let mut dg = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        dg[i % d] += gi * xhat[i];
                    }
                    accumulate(&mut grads[gain.0], dg);
                }
                if wants(bias) {
                    let mut db = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                    accumulate(&mut grads[bias.0], db);
                }
            }
            Op::Reshape(a) | Op::StraightThrough(a) => {
                accumulate(&mut grads[a.0], g.to_vec());
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            Op::SliceCols { a, start } => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let w = node.value.last_dim();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(&mut grads[a.0], da);
            }
            Op::ConcatCols(parts) => {
                let r = node.value.shape()[0];
                let total = node.value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if wants(p) {
                        let mut dp = Vec::with_capacity(r * c);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(&mut grads[p.0], dp);
                    }
                    offset += c;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(&mut grads[a.0], vec![g[0]; n]);
            }
            Op::PowerNormalize { a, divisor, rms } => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / divisor;
                let da = y.iter().zip(g).map(|(yi, gi)| (gi - yi * dot) / rms).collect();
                accumulate(&mut grads[a.0], da);
            }
        }
    }
}
