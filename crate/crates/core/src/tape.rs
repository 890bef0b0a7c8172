//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every operation in evaluation order. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates exact gradients into every node that depends on a
//! differentiable leaf. Constants are leaves that never receive a gradient.

use crate::error::{Error, Result};
use crate::linalg::{inverse, slogdet};
use crate::tensor::Tensor;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Exponents in [`Tape::graph_lse`] are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// `aᵀ · b`
    TMatMul(Var, Var),
    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Column means: `N×C → 1×C`.
    MeanRows(Var),
    /// Row sums: `N×C → N×1`.
    SumCols(Var),
    RowNorms(Var),
    /// `−log(|det a| + eps)`
    NegLogDet(Var, f64),
    PairSqDist(Var),
    GraphLse(Vec<(Var, Tensor)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulT(a, b), ng))
    }

    pub fn t_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).t_matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::TMatMul(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "row broadcast of {}x{} onto {}x{}",
                b.rows(),
                b.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bj;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Affine layer `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Softmax(a), ng)
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        let ng = self.ng(a);
        self.push(v, Op::Log(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::filled(1, 1, self.value(a).mean());
        let ng = self.ng(a);
        self.push(v, Op::Mean(a), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows() as f64;
        let mut out = Tensor::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let out = out.map(|v| v / n);
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.rows(), 1, |i, _| x.row(i).iter().sum());
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// Euclidean norm of each row: `N×d → N×1`.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.rows(), 1, |i, _| {
            x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
        });
        let ng = self.ng(a);
        self.push(out, Op::RowNorms(a), ng)
    }

    /// `−log(|det a| + eps)` for a square `a`. A singular `a` contributes no
    /// gradient.
    pub fn neg_log_det(&mut self, a: Var, eps: f64) -> Result<Var> {
        let d = slogdet(self.value(a))?;
        let v = -(d.abs_det() + eps).ln();
        let ng = self.ng(a);
        Ok(self.push(Tensor::filled(1, 1, v), Op::NegLogDet(a, eps), ng))
    }

    /// Pairwise squared Euclidean distances between rows: `n×p → n×n`.
    pub fn pair_sq_dist(&mut self, a: Var) -> Var {
        let v = pair_sq_dist(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::PairSqDist(a), ng)
    }

    /// `log(1 + Σ exp(clamp(d[i,j]·w[i,j], ±EXP_CLAMP)))` over every entry with
    /// `w[i,j] ≠ 0`, summed across all `(d, w)` terms, via log-sum-exp.
    pub fn graph_lse(&mut self, terms: Vec<(Var, Tensor)>) -> Result<Var> {
        let mut exps = vec![0.0];
        for (d, w) in &terms {
            let dv = self.value(*d);
            dv.expect_same_shape(w, "graph weights vs. squared distances")?;
            for (&x, &h) in dv.data().iter().zip(w.data()) {
                if h != 0.0 {
                    exps.push((x * h).clamp(-EXP_CLAMP, EXP_CLAMP));
                }
            }
        }
        let v = log_sum_exp(&exps);
        let ng = terms.iter().any(|(d, _)| self.ng(*d));
        Ok(self.push(Tensor::filled(1, 1, v), Op::GraphLse(terms), ng))
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.value(out).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.matmul_t(bv)?);
                }
                if self.ng(*b) {
                    acc(*b, av.t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.matmul(bv)?);
                }
                if self.ng(*b) {
                    acc(*b, g.t_matmul(av)?);
                }
            }
            Op::TMatMul(a, b) => {
                // y = aᵀ b: da = b gᵀ, db = a g
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, bv.matmul_t(g)?);
                }
                if self.ng(*b) {
                    acc(*b, av.matmul(g)?);
                }
            }
            Op::AddRow(a, b) => {
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
                acc(*a, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y)?);
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y)?);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?);
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))?),
            Op::Softmax(a) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                        *d = yr[j] * (gr[j] - inner);
                    }
                }
                acc(*a, dx);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.zip_map(x, |gv, xv| if xv > LOG_FLOOR { gv / xv } else { 0.0 })?,
                );
            }
            Op::Exp(a) => acc(*a, g.zip_map(y, |gv, e| gv * e)?),
            Op::Square(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| 2.0 * gv * xv)?);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let s = g.data()[0] / x.len() as f64;
                acc(*a, Tensor::filled(x.rows(), x.cols(), s));
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                acc(
                    *a,
                    Tensor::from_fn(x.rows(), x.cols(), |_, j| g.data()[j] / n),
                );
            }
            Op::SumCols(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::from_fn(x.rows(), x.cols(), |i, _| g.data()[i]));
            }
            Op::RowNorms(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    Tensor::from_fn(x.rows(), x.cols(), |i, j| {
                        let n = y.data()[i];
                        if n > 0.0 {
                            g.data()[i] * x[(i, j)] / n
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::NegLogDet(a, eps) => {
                let x = self.value(*a);
                let d = slogdet(x)?;
                if d.is_singular() {
                    return Ok(());
                }
                let abs = d.abs_det();
                let factor = -g.data()[0] * abs / (abs + eps);
                acc(*a, inverse(x)?.transpose().map(|v| v * factor));
            }
            Op::PairSqDist(a) => {
                let z = self.value(*a);
                let (n, p) = z.shape();
                let mut dz = Tensor::zeros(n, p);
                for i in 0..n {
                    for j in 0..n {
                        let c = 2.0 * (g[(i, j)] + g[(j, i)]);
                        if c == 0.0 || i == j {
                            continue;
                        }
                        for k in 0..p {
                            dz[(i, k)] += c * (z[(i, k)] - z[(j, k)]);
                        }
                    }
                }
                acc(*a, dz);
            }
            Op::GraphLse(terms) => {
                let total = y.data()[0];
                let gs = g.data()[0];
                for (d, w) in terms {
                    if !self.ng(*d) {
                        continue;
                    }
                    let dv = self.value(*d);
                    let grad = dv.zip_map(w, |x, h| {
                        if h == 0.0 {
                            return 0.0;
                        }
                        let e = x * h;
                        if e.abs() >= EXP_CLAMP {
                            return 0.0;
                        }
                        gs * (e - total).exp() * h
                    })?;
                    acc(*d, grad);
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub fn pair_sq_dist(z: &Tensor) -> Tensor {
    let n = z.rows();
    let mut d = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
