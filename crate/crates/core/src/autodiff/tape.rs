//! Operation recorder and reverse sweep.

use crate::error::{BeamError, Result};
use crate::scalar::Real;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    RowScale(Var, Var),
    Gather(Var, Vec<usize>),
    GroupSum(Var, usize),
    SumAll(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Abs(Var),
    Sigmoid(Var),
    Exp(Var),
    Log2(Var),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    MaxScalar(Var, T),
    SoftmaxRows(Var),
    Modulus(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records real-matrix operations for one forward pass and replays them in
/// reverse to produce gradients. Complex quantities are carried as pairs of
/// real nodes (see [`super::complex`]).
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every node on the tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; exact zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> BeamError {
    BeamError::Shape { op, lhs: a, rhs: b }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears every record so the tape can serve another forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &'static str) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Matrix product `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        gemm_nn(&self.value(a).data, &self.value(b).data, &mut out.data, sa.0, sa.1, sb.1);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Scales row `r` of `x` by `s[r]` (`s` is a column).
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss != (sx.0, 1) {
            return Err(shape_err("row_scale", sx, ss));
        }
        let (vx, vs) = (self.value(x), self.value(s));
        let mut out = vx.clone();
        for r in 0..sx.0 {
            let f = vs.data[r];
            for v in &mut out.data[r * sx.1..(r + 1) * sx.1] {
                *v *= f;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(out, Op::RowScale(x, s), ng))
    }

    /// Output row `i` is input row `idx[i]`; repeated indices broadcast.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", (rows, cols), (bad, 0)));
        }
        let vx = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor {
            rows: idx.len(),
            cols,
            data,
        };
        let ng = self.ng(x);
        Ok(self.push(out, Op::Gather(x, idx), ng))
    }

    /// Sums consecutive blocks of `group` rows: `(g*m) x c -> m x c`.
    pub fn group_sum(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if group == 0 || rows % group != 0 {
            return Err(shape_err("group_sum", (rows, cols), (group, 0)));
        }
        let m = rows / group;
        let vx = self.value(x);
        let mut out = Tensor::zeros(m, cols);
        for r in 0..rows {
            let o = r / group;
            for c in 0..cols {
                out.data[o * cols + c] += vx.data[r * cols + c];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::GroupSum(x, group), ng))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { v * slope }, Op::LeakyRelu(x, slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    /// Logistic function `1 / (1 + e^{-x})`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log2(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.log2(), Op::Log2(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / v, Op::Recip(x))
    }

    /// `max(x, c)` elementwise; gradient flows only where `x > c`.
    pub fn max_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v.max(c), Op::MaxScalar(x, c))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = vx.clone();
        for r in 0..vx.rows {
            let row = &mut out.data[r * vx.cols..(r + 1) * vx.cols];
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// `sqrt(re^2 + im^2)`; the gradient at the origin is taken as zero.
    pub fn modulus(&mut self, re: Var, im: Var) -> Result<Var> {
        self.zip(re, im, |a, b| a.hypot(b), Op::Modulus(re, im), "modulus")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => return Err(shape_err("concat_cols", (0, 0), (0, 0))),
        };
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", (rows, 0), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start + len > cols || len == 0 {
            return Err(shape_err("slice_cols", (rows, cols), (start, len)));
        }
        let vx = self.value(x);
        let mut out = Tensor::zeros(rows, len);
        for r in 0..rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&vx.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return Err(shape_err("reshape", s, (rows, cols)));
        }
        let mut out = self.value(x).clone();
        out.rows = rows;
        out.cols = cols;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Reverse sweep from a `1 x 1` loss. A tape supports one sweep per
    /// forward pass; call [`Tape::reset`] before recording the next one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(BeamError::Lifecycle("backward called before any forward pass".into()));
        }
        if self.consumed {
            return Err(BeamError::Lifecycle("tape already swept; reset before reuse".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward (loss must be scalar)", self.shape(loss), (1, 1)));
        }
        if !self.value(loss).data[0].is_finite() {
            return Err(BeamError::NonFinite {
                sample: 0,
                what: "loss".into(),
            });
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.pullback(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn pullback(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let elementwise = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            let vx = &self.nodes[x.0].value;
            let data = vx
                .data
                .iter()
                .zip(&y.data)
                .zip(&g.data)
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor {
                rows: vx.rows,
                cols: vx.cols,
                data,
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_with(g, vb, |gv, bv| gv * bv));
                acc(*b, zip_with(g, va, |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                acc(*a, zip_with(g, vb, |gv, bv| gv / bv));
                let gb = Tensor {
                    rows: y.rows,
                    cols: y.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&y.data)
                        .zip(&vb.data)
                        .map(|((&gv, &yv), &bv)| -gv * yv / bv)
                        .collect(),
                };
                acc(*b, gb);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows, va.cols, vb.cols);
                if self.nodes[a.0].needs_grad {
                    let mut ga = Tensor::zeros(m, k);
                    gemm_nt(&g.data, &vb.data, &mut ga.data, m, n, k);
                    acc(*a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = Tensor::zeros(k, n);
                    gemm_tn(&va.data, &g.data, &mut gb.data, m, k, n);
                    acc(*b, gb);
                }
            }
            Op::RowScale(x, s) => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let cols = vx.cols;
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(vs.rows, 1);
                for r in 0..vx.rows {
                    let mut d = T::zero();
                    for c in 0..cols {
                        let idx = r * cols + c;
                        d += g.data[idx] * vx.data[idx];
                        gx.data[idx] = g.data[idx] * vs.data[r];
                    }
                    gs.data[r] = d;
                }
                acc(*x, gx);
                acc(*s, gs);
            }
            Op::Gather(x, idx) => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for (o, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gx.data[src * cols + c] += g.data[o * cols + c];
                    }
                }
                acc(*x, gx);
            }
            Op::GroupSum(x, group) => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let o = r / group;
                    gx.data[r * cols..(r + 1) * cols].copy_from_slice(&g.data[o * cols..(o + 1) * cols]);
                }
                acc(*x, gx);
            }
            Op::SumAll(x) => {
                let (rows, cols) = self.shape(*x);
                acc(*x, Tensor::full(rows, cols, g.data[0]));
            }
            Op::Relu(x) => acc(*x, elementwise(*x, &|xv, _, gv| if xv > T::zero() { gv } else { T::zero() })),
            Op::LeakyRelu(x, s) => {
                let s = *s;
                acc(*x, elementwise(*x, &|xv, _, gv| if xv > T::zero() { gv } else { gv * s }))
            }
            Op::Abs(x) => acc(
                *x,
                elementwise(*x, &|xv, _, gv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Sigmoid(x) => acc(*x, elementwise(*x, &|_, yv, gv| gv * yv * (T::one() - yv))),
            Op::Exp(x) => acc(*x, elementwise(*x, &|_, yv, gv| gv * yv)),
            Op::Log2(x) => acc(*x, elementwise(*x, &|xv, _, gv| gv / (xv * T::LN_2()))),
            Op::Sqrt(x) => acc(
                *x,
                elementwise(*x, &|_, yv, gv| {
                    if yv > T::zero() {
                        gv / (yv + yv)
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Square(x) => acc(*x, elementwise(*x, &|xv, _, gv| gv * (xv + xv))),
            Op::Recip(x) => acc(*x, elementwise(*x, &|_, yv, gv| -gv * yv * yv)),
            Op::MaxScalar(x, c) => {
                let c = *c;
                acc(*x, elementwise(*x, &|xv, _, gv| if xv > c { gv } else { T::zero() }))
            }
            Op::SoftmaxRows(x) => {
                let cols = y.cols;
                let mut gx = Tensor::zeros(y.rows, cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        gx.data[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::Modulus(re, im) => {
                let (vr, vi) = (self.value(*re), self.value(*im));
                let ratio = |num: &Tensor<T>| Tensor {
                    rows: y.rows,
                    cols: y.cols,
                    data: num
                        .data
                        .iter()
                        .zip(&y.data)
                        .zip(&g.data)
                        .map(|((&n, &m), &gv)| if m > T::zero() { gv * n / m } else { T::zero() })
                        .collect(),
                };
                acc(*re, ratio(vr));
                acc(*im, ratio(vi));
            }
            Op::ConcatCols(parts) => {
                let cols = y.cols;
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    let mut gp = Tensor::zeros(y.rows, pc);
                    for r in 0..y.rows {
                        gp.data[r * pc..(r + 1) * pc].copy_from_slice(&g.data[r * cols + off..r * cols + off + pc]);
                    }
                    acc(p, gp);
                    off += pc;
                }
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = self.shape(*x);
                let len = y.cols;
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    gx.data[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                acc(*x, gx);
            }
            Op::Reshape(x) => {
                let (rows, cols) = self.shape(*x);
                acc(
                    *x,
                    Tensor {
                        rows,
                        cols,
                        data: g.data.clone(),
                    },
                );
            }
        }
    }
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
