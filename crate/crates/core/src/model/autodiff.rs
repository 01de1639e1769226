//! Tape-based reverse-mode automatic differentiation over [`Mat`].

use crate::error::{Error, Result};
use crate::tdist::special::{digamma_unchecked, log_gamma_unchecked};

use super::tensor::{gemm, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// Adds a 1×m row to every row.
    AddRow(Var, Var),
    /// Multiplies every row elementwise by a 1×m row.
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    Log1p(Var),
    LogGamma(Var),
    /// Row-wise standardization; the node value is the normalized input.
    LayerNorm { x: Var, inv_std: Vec<T> },
    Dropout(Var, Mat<T>),
    Column(Var, usize),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, m: Mat<T>) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as data.
    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut c = Mat::zeros(sa.0, sb.1);
        gemm(self.value(a), false, self.value(b), false, T::zero(), &mut c);
        Ok(self.push(c, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(Mat::from_vec(sa.0, sa.1, data), op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn row_broadcast(&mut self, a: Var, r: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(r));
        if sr != (1, sa.1) {
            return Err(shape_err(name, sa, sr));
        }
        let (va, vr) = (self.value(a), self.value(r));
        let mut out = va.clone();
        for row in out.data.chunks_mut(sa.1.max(1)) {
            for (x, &y) in row.iter_mut().zip(&vr.data) {
                *x = f(*x, y);
            }
        }
        Ok(self.push(out, op, &[a, r]))
    }

    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, "add_row", |x, y| x + y, Op::AddRow(a, r))
    }

    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, "mul_row", |x, y| x * y, Op::MulRow(a, r))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn log1p(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln_1p(), Op::Log1p(a))
    }

    pub fn log_gamma(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::of(log_gamma_unchecked(x.f64())), Op::LogGamma(a))
    }

    /// Row-wise `(x − mean)/sqrt(var + eps)` with the population variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let n = T::of(cols as f64);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let is = T::one() / (var + T::of(eps)).sqrt();
            for (o, &v) in out.data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x: a, inv_std }, &[a])
    }

    /// Multiplies by an explicit mask; inverted-dropout masks hold
    /// `0` or `1/(1 − rate)`.
    pub fn dropout(&mut self, a: Var, mask: Mat<T>) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(shape_err("dropout", self.shape(a), mask.shape()));
        }
        let v = {
            let x = self.value(a);
            Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&mask.data).map(|(&p, &q)| p * q).collect())
        };
        Ok(self.push(v, Op::Dropout(a, mask), &[a]))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if j >= c {
            return Err(Error::Contract(format!("column {j} out of range for {c} columns")));
        }
        let x = self.value(a);
        let v = Mat::from_vec(r, 1, (0..r).map(|i| x.at(i, j)).collect());
        Ok(self.push(v, Op::Column(a, j), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().fold(T::zero(), |s, &v| s + v);
        self.push(Mat::filled(1, 1, s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().fold(T::zero(), |s, &v| s + v) / T::of(x.len() as f64);
        self.push(Mat::filled(1, 1, s), Op::Mean(a), &[a])
    }

    /// Gradients of the scalar `out` with respect to every node that needs
    /// one; indexable by [`Var`].
    pub fn backward(&self, out: Var) -> Result<Grads<T>> {
        if self.shape(out) != (1, 1) {
            return Err(Error::Contract(format!("backward needs a scalar, got {:?}", self.shape(out))));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::filled(1, 1, T::one()));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Mat<T>)| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let (r, c) = self.nodes[v.0].value.shape();
            let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(r, c));
            f(slot);
        };
        let elementwise = |target: &mut Mat<T>, f: &dyn Fn(usize) -> T| {
            for (k, t) in target.data.iter_mut().enumerate() {
                *t = *t + f(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if wants(a) {
                    acc(a, &mut |t| gemm(g, false, val(b), true, T::one(), t));
                }
                if wants(b) {
                    acc(b, &mut |t| gemm(val(a), true, g, false, T::one(), t));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k]));
                acc(*b, &mut |t| elementwise(t, &|k| g.data[k]));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k]));
                acc(*b, &mut |t| elementwise(t, &|k| -g.data[k]));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * vb.data[k]));
                acc(*b, &mut |t| elementwise(t, &|k| g.data[k] * va.data[k]));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] / vb.data[k]));
                acc(*b, &mut |t| {
                    elementwise(t, &|k| -g.data[k] * va.data[k] / (vb.data[k] * vb.data[k]))
                });
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k]));
                acc(*r, &mut |t| {
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (x, &y) in t.data.iter_mut().zip(row) {
                            *x = *x + y;
                        }
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (val(*a), val(*r));
                let cols = g.cols.max(1);
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * vr.data[k % cols]));
                acc(*r, &mut |t| {
                    for (grow, arow) in g.data.chunks(cols).zip(va.data.chunks(cols)) {
                        for ((x, &gy), &ay) in t.data.iter_mut().zip(grow).zip(arow) {
                            *x = *x + gy * ay;
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * s));
            }
            Op::AddScalar(a) => acc(*a, &mut |t| elementwise(t, &|k| g.data[k])),
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * T::of(2.0) * va.data[k]));
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |t| {
                    elementwise(t, &|k| if va.data[k] > T::zero() { g.data[k] } else { T::zero() })
                });
            }
            Op::Softplus(a) => {
                let va = val(*a);
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * sigmoid(va.data[k])));
            }
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] / va.data[k]));
            }
            Op::Log1p(a) => {
                let va = val(*a);
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] / (T::one() + va.data[k])));
            }
            Op::LogGamma(a) => {
                let va = val(*a);
                acc(*a, &mut |t| {
                    elementwise(t, &|k| g.data[k] * T::of(digamma_unchecked(va.data[k].f64())))
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let xhat = &node.value;
                let cols = xhat.cols;
                let n = T::of(cols as f64);
                acc(*x, &mut |t| {
                    for r in 0..xhat.rows {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let sg = gr.iter().fold(T::zero(), |s, &v| s + v);
                        let sgx = gr.iter().zip(xr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        let is = inv_std[r];
                        for c in 0..cols {
                            let d = is / n * (n * gr[c] - sg - xr[c] * sgx);
                            t.data[r * cols + c] = t.data[r * cols + c] + d;
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => {
                acc(*a, &mut |t| elementwise(t, &|k| g.data[k] * mask.data[k]));
            }
            Op::Column(a, j) => {
                let j = *j;
                acc(*a, &mut |t| {
                    let cols = t.cols;
                    for (r, &gv) in g.data.iter().enumerate() {
                        t.data[r * cols + j] = t.data[r * cols + j] + gv;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |t| elementwise(t, &|_| g.data[0])),
            Op::Mean(a) => {
                let n = T::of(val(*a).len() as f64);
                acc(*a, &mut |t| elementwise(t, &|_| g.data[0] / n));
            }
        }
    }
}

pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<T>> {
        self.grads[v.0].take()
    }
}
