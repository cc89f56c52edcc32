//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is built fresh for every training step. Leaves are registered
//! with [`Tape::leaf`] (trainable) or [`Tape::constant`] (frozen); every
//! operation appends a node holding its output value and the parent handles
//! needed to run the chain rule. Because a node can only reference nodes that
//! already exist, the node list is always in topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Broadcasting is limited to scalar (`[]`-shaped) operands in
//! [`Tape::add`], [`Tape::sub`] and [`Tape::mul`]. Bias addition has its own
//! explicit op, [`Tape::add_row`].
//!
//! A [`Var`] is only meaningful on the tape that produced it.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Outer(Var, Var),
    Normalize { input: Var, norm: T },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Transpose(Var),
    AddRow(Var, Var),
    Sum(Var),
    Mse(Var, Var),
    Inverse(Var),
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    BlockDiag(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Lower bound on the norm accepted by [`Tape::normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` was not reached.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() == b.shape() || a.is_scalar() || b.is_scalar() {
        Ok(())
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data).expect("shapes agree")
    } else if a.is_scalar() {
        let x = a.item();
        b.map(|y| f(x, y))
    } else {
        let y = b.item();
        a.map(|x| f(x, y))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a frozen input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Moves a node's value out of the tape, consuming it.
    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uu, vv) = (self.value(u), self.value(v));
        if uu.rank() != 1 || vv.rank() != 1 || uu.numel() != vv.numel() {
            return Err(Error::dim("outer", uu.shape(), vv.shape()));
        }
        let d = uu.numel();
        let mut data = Vec::with_capacity(d * d);
        for &x in uu.data() {
            data.extend(vv.data().iter().map(|&y| x * y));
        }
        let out = Tensor::new(&[d, d], data)?;
        let rg = self.rg(&[u, v]);
        Ok(self.push(out, Op::Outer(u, v), rg))
    }

    /// Scales a vector to unit ℓ2 norm; fails below [`NORM_EPS`].
    pub fn normalize(&mut self, u: Var) -> Result<Var> {
        let uu = self.value(u);
        if uu.rank() != 1 {
            return Err(Error::dim("normalize", uu.shape(), &[uu.numel()]));
        }
        let norm = uu.norm();
        if norm.is_nan() || norm.to_f64_lossy() <= NORM_EPS {
            return Err(Error::DegenerateVector {
                norm: norm.to_f64_lossy(),
                guard: NORM_EPS,
            });
        }
        let out = uu.scale(T::one() / norm);
        let rg = self.rg(&[u]);
        Ok(self.push(out, Op::Normalize { input: u, norm }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("add", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("sub", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("mul", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Adds the vector `bias[f]` to every row of `x[batch×f]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (m, n) = xv.dims2()?;
        if bv.rank() != 1 || bv.numel() != n {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for i in 0..m {
            for (o, &b) in data[i * n..(i + 1) * n].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim("mse", p.shape(), t.shape()));
        }
        let n = T::of(p.numel().max(1) as f64);
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target), rg))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let out = crate::linalg::inverse(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Inverse(a), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).rows(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows { input: a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).cols(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { input: a, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = Tensor::concat_rows(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = Tensor::concat_cols(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Dense block-diagonal matrix from square blocks of equal size.
    pub fn block_diag(&mut self, blocks: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = blocks.iter().map(|&b| self.value(b)).collect();
        let out = crate::adapters::blocks::dense_block_diagonal(&values)?;
        let rg = self.rg(blocks);
        Ok(self.push(out, Op::BlockDiag(blocks.to_vec()), rg))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        let target_shape = self.nodes[v.0].value.shape();
        // Scalar operands that were broadcast collect the summed gradient.
        let g = if target_shape.is_empty() && !g.is_scalar() {
            Tensor::scalar(g.sum())
        } else {
            g
        };
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(T::one(), &g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul(&bv.transpose()?)?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, av.transpose()?.matmul(g)?)?;
                }
            }
            Op::Outer(u, v) => {
                let (uv, vv) = (self.value(*u), self.value(*v));
                let d = uv.numel();
                let gm = g.reshape(&[d, d])?;
                if self.requires_grad(*u) {
                    let gu = gm.matmul(&vv.reshape(&[d, 1])?)?.reshape(&[d])?;
                    self.accumulate(grads, *u, gu)?;
                }
                if self.requires_grad(*v) {
                    let gv = gm.transpose()?.matmul(&uv.reshape(&[d, 1])?)?.reshape(&[d])?;
                    self.accumulate(grads, *v, gv)?;
                }
            }
            Op::Normalize { input, norm } => {
                let y = &node.value;
                let proj = y.dot(g)?;
                let mut gu = g.clone();
                gu.axpy(-proj, y)?;
                self.accumulate(grads, *input, gu.scale(T::one() / *norm))?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, broadcast_zip(g, bv, |x, y| x * y))?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, broadcast_zip(g, av, |x, y| x * y))?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::Relu(a) => {
                let gx = g.zip_map(self.value(*a), "relu", |gi, x| {
                    if x > T::zero() {
                        gi
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, *a, gx)?;
            }
            Op::Tanh(a) => {
                let gx = g.zip_map(&node.value, "tanh", |gi, y| gi * (T::one() - y * y))?;
                self.accumulate(grads, *a, gx)?;
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?)?,
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.requires_grad(*bias) {
                    let (m, n) = g.dims2()?;
                    let mut col = vec![T::zero(); n];
                    for i in 0..m {
                        for (c, &v) in col.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                            *c += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(col))?;
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()))?;
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let c = T::of(2.0) * g.item() / T::of(pv.numel().max(1) as f64);
                let diff = pv.sub(tv)?.scale(c);
                if self.requires_grad(*t) {
                    self.accumulate(grads, *t, diff.scale(-T::one()))?;
                }
                self.accumulate(grads, *p, diff)?;
            }
            Op::Inverse(a) => {
                // d(A⁻¹) = -A⁻¹ dA A⁻¹  =>  Ḡ_A = -A⁻ᵀ G A⁻ᵀ
                let yt = node.value.transpose()?;
                let ga = yt.matmul(g)?.matmul(&yt)?.scale(-T::one());
                self.accumulate(grads, *a, ga)?;
            }
            Op::SliceRows { input, start } => {
                let shape = self.value(*input).shape().to_vec();
                let cols = shape[1];
                let mut full = Tensor::zeros(&shape);
                let off = start * cols;
                full.data_mut()[off..off + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *input, full)?;
            }
            Op::SliceCols { input, start } => {
                let shape = self.value(*input).shape().to_vec();
                let (m, n) = (shape[0], shape[1]);
                let w = g.dims2()?.1;
                let mut full = Tensor::zeros(&shape);
                for i in 0..m {
                    full.data_mut()[i * n + start..i * n + start + w]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *input, full)?;
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let pm = self.value(p).dims2()?.0;
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.rows(row, row + pm)?)?;
                    }
                    row += pm;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let pn = self.value(p).dims2()?.1;
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.cols(col, col + pn)?)?;
                    }
                    col += pn;
                }
            }
            Op::BlockDiag(blocks) => {
                let mut off = 0;
                for &b in blocks {
                    let m = self.value(b).dims2()?.0;
                    if self.requires_grad(b) {
                        let gb = g.rows(off, off + m)?.cols(off, off + m)?;
                        self.accumulate(grads, b, gb)?;
                    }
                    off += m;
                }
            }
        }
        Ok(())
    }
}
