//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is an append-only tape of nodes. Every node stores its value,
//! an optional gradient buffer of the same length, and the operation (with
//! parent handles) that produced it. Because a node can only reference
//! earlier nodes, creation order is a topological order and
//! [`Graph::backward`] walks the tape once in reverse.
//!
//! Layout conventions: 1-D convolutions take `(batch, channels, length)`,
//! dense layers take `(batch, features)` with weights `(out, in)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softsort::{soft_sort_traced, SoftSortConfig, SoftSortTrace};

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    MeanLast(Var),
    Dense { x: Var, w: Var, b: Var },
    ChannelScale { x: Var, gate: Var },
    Reshape(Var),
    Affine { x: Var, scale: f64 },
    SubConst(Var),
    MulConst { x: Var, c: Vec<f64> },
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Scale { x: Var, k: f64 },
    SoftSort { x: Var, trace: SoftSortTrace },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

// Row-major strided GEMM: c = alpha * a(m x k) * b(k x n) + beta * c.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols - 1) * cs;
    if k > 0 {
        assert!(last(rsa, csa, m, k) < a.len());
        assert!(last(rsb, csb, k, n) < b.len());
    }
    assert!(last(rsc, csc, m, n) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Writes the `(Cin*K, L)` patch matrix of one `(Cin, L)` sample into `cols`,
/// row `c*K + kk` holding `x[c, t + kk - K/2]`. Entries that fall in the
/// zero padding are never written, so `cols` must start zeroed and be reused
/// only for the same shape.
fn im2col(x: &[f64], cin: usize, k: usize, len: usize, cols: &mut [f64]) {
    let pad = k / 2;
    for c in 0..cin {
        let src = &x[c * len..][..len];
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * len..][..len];
            let lo = pad.saturating_sub(kk);
            let hi = (len + pad).saturating_sub(kk).min(len);
            if lo < hi {
                row[lo..hi].copy_from_slice(&src[lo + kk - pad..hi + kk - pad]);
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is kept after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Accumulated gradient, or `None` if nothing flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.value(v).numel()],
        }
    }

    /// Same-padded, stride-1 convolution. `x: (B, Cin, L)`, `w: (Cout, Cin, K)`
    /// with odd `K`, `b: (Cout)`; output `(B, Cout, L)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (&[batch, cin, len], &[cout, wcin, k], &[bout]) = (xs, ws, bs) else {
            return Err(Error::ShapeMismatch(format!("conv1d: x {xs:?}, w {ws:?}, b {bs:?}")));
        };
        if wcin != cin || bout != cout || k % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("conv1d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let ck = cin * k;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut cols = vec![0.0; ck * len];
        let mut out = vec![0.0; batch * cout * len];
        for bi in 0..batch {
            im2col(&xd[bi * cin * len..][..cin * len], cin, k, len, &mut cols);
            let y = &mut out[bi * cout * len..][..cout * len];
            for (o, row) in y.chunks_exact_mut(len).enumerate() {
                row.fill(bd[o]);
            }
            gemm(cout, ck, len, wd, (ck, 1), &cols, (len, 1), 1.0, y, (len, 1));
        }
        let rg = self.needs(&[x, w, b]);
        let value = Tensor { shape: vec![batch, cout, len], data: out };
        Ok(self.push(value, Op::Conv1d { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Logistic sigmoid, clamped to the open interval (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!("add: {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(p, q)| p + q).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some((&len, rest)) = t.shape().split_last() else {
            return Err(Error::ShapeMismatch("mean_last on a scalar".into()));
        };
        if len == 0 {
            return Err(Error::ShapeMismatch("mean_last over an empty axis".into()));
        }
        let data = t.data().chunks_exact(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        let value = Tensor { shape: rest.to_vec(), data };
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MeanLast(x), rg))
    }

    /// `x: (B, In)`, `w: (Out, In)`, `b: (Out)` -> `(B, Out)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (&[batch, fin], &[fout, wfin], &[bout]) = (xs, ws, bs) else {
            return Err(Error::ShapeMismatch(format!("dense: x {xs:?}, w {ws:?}, b {bs:?}")));
        };
        if wfin != fin || bout != fout {
            return Err(Error::ShapeMismatch(format!("dense: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * fout);
        for row in xd.chunks_exact(fin) {
            for (o, wrow) in wd.chunks_exact(fin).enumerate() {
                out.push(bd[o] + row.iter().zip(wrow).map(|(p, q)| p * q).sum::<f64>());
            }
        }
        let rg = self.needs(&[x, w, b]);
        let value = Tensor { shape: vec![batch, fout], data: out };
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    /// `x: (B, C, L)` scaled per channel by `gate: (B, C)`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        let (&[batch, ch, len], &[gb, gc]) = (xs, gs) else {
            return Err(Error::ShapeMismatch(format!("channel_scale: x {xs:?}, gate {gs:?}")));
        };
        if gb != batch || gc != ch {
            return Err(Error::ShapeMismatch(format!("channel_scale: x {xs:?}, gate {gs:?}")));
        }
        let gd = self.value(gate).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &g) in data.chunks_exact_mut(len).zip(gd) {
            row.iter_mut().for_each(|v| *v *= g);
        }
        let rg = self.needs(&[x, gate]);
        let value = Tensor { shape: vec![batch, ch, len], data };
        Ok(self.push(value, Op::ChannelScale { x, gate }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(shape, t.data().to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `shift + scale * x` with constant coefficients.
    pub fn affine(&mut self, x: Var, shift: f64, scale: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| shift + scale * v).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    /// `x - c` for a constant array `c` of the same length.
    pub fn sub_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != c.len() {
            return Err(Error::LengthMismatch(t.numel(), c.len()));
        }
        let data = t.data().iter().zip(c).map(|(p, q)| p - q).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::SubConst(x), rg))
    }

    /// Element-wise `x * c` for a constant array `c` of the same length.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != c.len() {
            return Err(Error::LengthMismatch(t.numel(), c.len()));
        }
        let data = t.data().iter().zip(c).map(|(p, q)| p * q).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MulConst { x, c: c.to_vec() }, rg))
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.abs()).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * v).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Square(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| k * v).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale { x, k }, rg)
    }

    /// Soft sort of a 1-D array.
    pub fn soft_sort(&mut self, x: Var, cfg: &SoftSortConfig) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 1 {
            return Err(Error::ShapeMismatch(format!("soft_sort expects 1-D input, got {:?}", t.shape())));
        }
        let trace = soft_sort_traced(t.data(), cfg)?;
        let value = Tensor::from_vec(trace.output.clone());
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::SoftSort { x, trace }, rg))
    }

    /// Back-propagates from a single-element `loss`. Each node is visited at
    /// most once, in reverse creation order. A graph supports one backward
    /// pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        let t = self.value(loss);
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        self.backward_done = true;
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            let contribs = self.local_grads(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (parent, g) in contribs {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let map = |x: Var, f: &dyn Fn(usize, f64) -> f64| -> (Var, Vec<f64>) {
            (x, g.iter().enumerate().map(|(j, &gj)| f(j, gj)).collect())
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Relu(x) => vec![map(*x, &|j, gj| if out[j] > 0.0 { gj } else { 0.0 })],
            Op::Sigmoid(x) => vec![map(*x, &|j, gj| gj * out[j] * (1.0 - out[j]))],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Reshape(x) | Op::SubConst(x) => vec![(*x, g.to_vec())],
            Op::Affine { x, scale } => vec![map(*x, &|_, gj| gj * scale)],
            Op::Scale { x, k } => vec![map(*x, &|_, gj| gj * k)],
            Op::MulConst { x, c } => vec![map(*x, &|j, gj| gj * c[j])],
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                vec![map(*x, &|j, gj| if xd[j] > 0.0 { gj } else if xd[j] < 0.0 { -gj } else { 0.0 })]
            }
            Op::Square(x) => {
                let xd = self.value(*x).data();
                vec![map(*x, &|j, gj| 2.0 * xd[j] * gj)]
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::MeanLast(x) => {
                let len = *self.shape(*x).last().unwrap();
                let mut dx = Vec::with_capacity(g.len() * len);
                for &gj in g {
                    dx.extend(std::iter::repeat_n(gj / len as f64, len));
                }
                vec![(*x, dx)]
            }
            Op::SoftSort { x, trace } => vec![(*x, trace.vjp(g))],
            Op::ChannelScale { x, gate } => {
                let len = *self.shape(*x).last().unwrap();
                let (xd, gd) = (self.value(*x).data(), self.value(*gate).data());
                let mut res = Vec::new();
                if self.node(*x).requires_grad {
                    let mut dx = g.to_vec();
                    for (row, &s) in dx.chunks_exact_mut(len).zip(gd) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    res.push((*x, dx));
                }
                if self.node(*gate).requires_grad {
                    let dgate = g
                        .chunks_exact(len)
                        .zip(xd.chunks_exact(len))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(p, q)| p * q).sum())
                        .collect();
                    res.push((*gate, dgate));
                }
                res
            }
            Op::Dense { x, w, b } => {
                let (fout, fin) = (self.shape(*w)[0], self.shape(*w)[1]);
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let mut res = Vec::new();
                if self.node(*x).requires_grad {
                    let mut dx = vec![0.0; xd.len()];
                    for (grow, dxrow) in g.chunks_exact(fout).zip(dx.chunks_exact_mut(fin)) {
                        for (&go, wrow) in grow.iter().zip(wd.chunks_exact(fin)) {
                            dxrow.iter_mut().zip(wrow).for_each(|(d, wv)| *d += go * wv);
                        }
                    }
                    res.push((*x, dx));
                }
                if self.node(*w).requires_grad {
                    let mut dw = vec![0.0; wd.len()];
                    for (grow, xrow) in g.chunks_exact(fout).zip(xd.chunks_exact(fin)) {
                        for (&go, dwrow) in grow.iter().zip(dw.chunks_exact_mut(fin)) {
                            dwrow.iter_mut().zip(xrow).for_each(|(d, xv)| *d += go * xv);
                        }
                    }
                    res.push((*w, dw));
                }
                if self.node(*b).requires_grad {
                    let mut db = vec![0.0; fout];
                    for grow in g.chunks_exact(fout) {
                        db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Conv1d { x, w, b } => self.conv1d_grads(*x, *w, *b, g),
        }
    }

    fn conv1d_grads(&self, x: Var, w: Var, b: Var, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let (batch, cin, len) = {
            let s = self.shape(x);
            (s[0], s[1], s[2])
        };
        let (cout, k) = (self.shape(w)[0], self.shape(w)[2]);
        let ck = cin * k;
        let pad = k / 2;
        let wd = self.value(w).data();
        let mut res = Vec::new();
        if self.node(w).requires_grad {
            let xd = self.value(x).data();
            let mut cols = vec![0.0; ck * len];
            let mut dw = vec![0.0; cout * ck];
            for bi in 0..batch {
                im2col(&xd[bi * cin * len..][..cin * len], cin, k, len, &mut cols);
                // dW += dY_b (Cout x L) * cols_b^T (L x CinK)
                gemm(cout, len, ck, &g[bi * cout * len..][..cout * len], (len, 1), &cols, (1, len), 1.0, &mut dw, (ck, 1));
            }
            res.push((w, dw));
        }
        if self.node(b).requires_grad {
            let mut db = vec![0.0; cout];
            for sample in g.chunks_exact(cout * len) {
                for (d, row) in db.iter_mut().zip(sample.chunks_exact(len)) {
                    *d += row.iter().sum::<f64>();
                }
            }
            res.push((b, db));
        }
        if self.node(x).requires_grad {
            let mut dx = vec![0.0; batch * cin * len];
            let mut dcols = vec![0.0; ck * len];
            for bi in 0..batch {
                // dcols_b = W^T (CinK x Cout) * dY_b (Cout x L)
                gemm(ck, cout, len, wd, (1, ck), &g[bi * cout * len..][..cout * len], (len, 1), 0.0, &mut dcols, (len, 1));
                for c in 0..cin {
                    let dst = &mut dx[(bi * cin + c) * len..][..len];
                    for kk in 0..k {
                        let row = &dcols[(c * k + kk) * len..][..len];
                        let lo = pad.saturating_sub(kk);
                        let hi = (len + pad).saturating_sub(kk).min(len);
                        if lo < hi {
                            dst[lo + kk - pad..hi + kk - pad]
                                .iter_mut()
                                .zip(&row[lo..hi])
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
            res.push((x, dx));
        }
        res
    }
}

/// Logistic function clamped into the open interval (0, 1).
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_gradient_is_the_constants() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.5]));
        let c = [0.25, 4.0, -1.5];
        let prod = g.mul_const(p, &c).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &c);
    }

    #[test]
    fn disconnected_param_has_zero_gradient() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let q = g.param(Tensor::from_vec(vec![5.0]));
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert!(g.grad(q).is_none());
        assert_eq!(g.grad_or_zeros(q), vec![0.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(p), Err(Error::NonScalarLoss(_))));
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::DoubleBackward)));
    }

    #[test]
    fn shared_node_accumulates() {
        // loss = sum(x + x) -> dx = 2
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![3.0, 4.0]));
        let y = g.add(x, x).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let (batch, cin, cout, len, k) = (2, 2, 3, 6, 3);
        let xd: Vec<f64> = (0..batch * cin * len).map(|i| (i as f64 * 0.37).sin()).collect();
        let wd: Vec<f64> = (0..cout * cin * k).map(|i| (i as f64 * 0.91).cos()).collect();
        let bd = vec![0.1, -0.2, 0.3];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![batch, cin, len], xd.clone()).unwrap());
        let w = g.param(Tensor::new(vec![cout, cin, k], wd.clone()).unwrap());
        let b = g.param(Tensor::from_vec(bd.clone()));
        let y = g.conv1d(x, w, b).unwrap();
        let out = g.value(y).data();
        for bi in 0..batch {
            for o in 0..cout {
                for t in 0..len {
                    let mut acc = bd[o];
                    for c in 0..cin {
                        for kk in 0..k {
                            let pos = t as isize + kk as isize - 1;
                            if (0..len as isize).contains(&pos) {
                                acc += wd[(o * cin + c) * k + kk] * xd[(bi * cin + c) * len + pos as usize];
                            }
                        }
                    }
                    let got = out[(bi * cout + o) * len + t];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 5]));
        let w = g.param(Tensor::zeros(vec![3, 1, 3]));
        let b = g.param(Tensor::zeros(vec![3]));
        assert!(matches!(g.conv1d(x, w, b), Err(Error::ShapeMismatch(_))));
        let w_even = g.param(Tensor::zeros(vec![3, 2, 4]));
        assert!(g.conv1d(x, w_even, b).is_err());
        let a = g.constant(Tensor::zeros(vec![2]));
        let c = g.constant(Tensor::zeros(vec![3]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        for v in [-1e6, -745.0, -40.0, 0.0, 40.0, 1e6] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "{v} -> {s}");
        }
    }
}
