use std::sync::Arc;

use super::kernels::{affine, col_sum_acc, matmul, matmul_acc, matmul_tn_acc};
use super::{Gradients, Mat, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Const,
    Param(usize),
    /// `x · w + b`, `b` a 1×m row.
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    /// Constant affine map `x · m + c`.
    Linear { x: Var, mt: Arc<Mat<T>> },
    Concat(Vec<Var>),
    Gather { x: Var, rows: Arc<Vec<usize>> },
    /// Row `i` of `x` added into output row `to[i]`.
    ScatterSum { x: Var, to: Arc<Vec<usize>> },
    Add(Var, Var),
    Sub(Var, Var),
    Mask { x: Var, mask: Arc<Mat<T>> },
    /// Output row `p` is `x[row_p, col_p .. col_p + width]`.
    Pick { x: Var, cells: Arc<Vec<(usize, usize)>> },
    RowNorm(Var),
    Sum(Var),
    MeanSquare(Var),
    Scale(Var, T),
}

/// Records matrix operations for reverse-mode differentiation.
///
/// Supported primitives: constant and parameter leaves, affine layers, ReLU,
/// constant affine maps, column concatenation, row gather, sum by receiver,
/// addition, subtraction, constant masks, vertex picking, row norms, sums,
/// mean squares and scaling.
pub struct Tape<T> {
    values: Vec<Mat<T>>,
    ops: Vec<Op<T>>,
    needs_grad: Vec<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.values[v.0]
    }

    pub fn take(&mut self, v: Var) -> Mat<T> {
        std::mem::replace(&mut self.values[v.0], Mat::zeros(0, 0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Which ReLU inputs are positive, in recording order. Two evaluations
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Relu(x) => Some(self.value(*x).data.iter().map(|&v| v > T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        self.push(store.mats[index].clone(), Op::Param(index), true)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols {
            return Err(Error::Shape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let out = affine(xv, wv, &bv.data);
        let g = self.grad_of(&[x, w, b]);
        Ok(self.push(out, Op::Affine { x, w, b }, g))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        }
        let g = self.grad_of(&[x]);
        self.push(out, Op::Relu(x), g)
    }

    /// Constant affine map `x · m + c`.
    pub fn linear(&mut self, x: Var, m: &Arc<Mat<T>>, mt: &Arc<Mat<T>>, c: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols != m.rows || c.len() != m.cols {
            return Err(Error::Shape(format!(
                "linear map {:?} applied to {:?}",
                m.shape(),
                xv.shape()
            )));
        }
        let out = affine(xv, m, c);
        let g = self.grad_of(&[x]);
        Ok(self.push(
            out,
            Op::Linear { x, mt: mt.clone() },
            g,
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(Error::Shape("concat: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            let row = out.row_mut(r);
            for &p in parts {
                let src = self.values[p.0].row(r);
                row[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let g = self.grad_of(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    pub fn gather(&mut self, x: Var, rows: &Arc<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        if rows.iter().any(|&r| r >= xv.rows) {
            return Err(Error::Index("gather row outside matrix".into()));
        }
        let mut out = Mat::zeros(rows.len(), xv.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::Gather { x, rows: rows.clone() }, g))
    }

    /// Sums rows of `x` into `n` receivers. Each receiver's contributions
    /// are added in ascending order of value, per column, so the result is
    /// independent of row order.
    pub fn scatter_sum(&mut self, x: Var, to: &Arc<Vec<usize>>, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if to.len() != xv.rows || to.iter().any(|&r| r >= n) {
            return Err(Error::Index("scatter receiver outside range".into()));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &r) in to.iter().enumerate() {
            members[r].push(i);
        }
        let mut out = Mat::zeros(n, xv.cols);
        let mut buf = Vec::new();
        for (r, rows) in members.iter().enumerate() {
            match rows.len() {
                0 => {}
                1 => out.row_mut(r).copy_from_slice(xv.row(rows[0])),
                _ => {
                    for c in 0..xv.cols {
                        buf.clear();
                        buf.extend(rows.iter().map(|&i| xv.get(i, c)));
                        buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                        let mut s = T::zero();
                        for &v in &buf {
                            s += v;
                        }
                        out.set(r, c, s);
                    }
                }
            }
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::ScatterSum { x, to: to.clone() }, g))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data.iter_mut().zip(&self.values[b.0].data) {
            *o -= v;
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    /// Elementwise product with a constant matrix.
    pub fn mask(&mut self, x: Var, mask: &Arc<Mat<T>>) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(Error::Shape("mask shape".into()));
        }
        let mut out = self.value(x).clone();
        for (o, &m) in out.data.iter_mut().zip(&mask.data) {
            *o *= m;
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::Mask { x, mask: mask.clone() }, g))
    }

    /// Picks `width`-wide row segments, one output row per `(row, col)`.
    pub fn pick(&mut self, x: Var, cells: &Arc<Vec<(usize, usize)>>, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if cells.iter().any(|&(r, c)| r >= xv.rows || c + width > xv.cols) {
            return Err(Error::Index("picked cell outside matrix".into()));
        }
        let mut out = Mat::zeros(cells.len(), width);
        for (p, &(r, c)) in cells.iter().enumerate() {
            out.row_mut(p).copy_from_slice(&xv.row(r)[c..c + width]);
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::Pick { x, cells: cells.clone() }, g))
    }

    /// Euclidean norm of every row, as a column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows)
            .map(|r| xv.row(r).iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let out = Mat::from_vec(xv.rows, 1, data);
        let g = self.grad_of(&[x]);
        self.push(out, Op::RowNorm(x), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        let g = self.grad_of(&[x]);
        self.push(Mat::scalar(s), Op::Sum(x), g)
    }

    pub fn mean_square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.data.len().max(1);
        let s: T = xv.data.iter().map(|&v| v * v).sum();
        let g = self.grad_of(&[x]);
        self.push(Mat::scalar(s / T::of(n as f64)), Op::MeanSquare(x), g)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v *= s;
        }
        let g = self.grad_of(&[x]);
        self.push(out, Op::Scale(x, s), g)
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Graph("loss must be a 1×1 value".into()));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(T::one()));
        let mut out = store.zeros_like();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            match &self.ops[i] {
                Op::Const => {}
                Op::Param(p) => {
                    let target = out
                        .mats
                        .get_mut(*p)
                        .ok_or_else(|| Error::Graph(format!("parameter {p} not in store")))?;
                    target.add_assign(&dy);
                }
                Op::Affine { x, w, b } => {
                    if self.needs_grad[x.0] {
                        let wt = self.values[w.0].transpose();
                        let mut dx = Mat::zeros(dy.rows, wt.cols);
                        matmul_acc(&dy, &wt, &mut dx);
                        self.accumulate(&mut grads, *x, dx);
                    }
                    if self.needs_grad[w.0] {
                        let wv = &self.values[w.0];
                        let mut dw = Mat::zeros(wv.rows, wv.cols);
                        matmul_tn_acc(&self.values[x.0], &dy, &mut dw);
                        self.accumulate(&mut grads, *w, dw);
                    }
                    if self.needs_grad[b.0] {
                        let mut db = Mat::zeros(1, dy.cols);
                        col_sum_acc(&dy, &mut db.data);
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    for (d, &y) in dx.data.iter_mut().zip(&self.values[i].data) {
                        if !(y > T::zero()) {
                            *d = T::zero();
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Linear { x, mt } => {
                    let dx = matmul(&dy, mt);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let cols = self.values[p.0].cols;
                        if self.needs_grad[p.0] {
                            let dp = Mat::from_fn(dy.rows, cols, |r, c| dy.get(r, at + c));
                            self.accumulate(&mut grads, p, dp);
                        }
                        at += cols;
                    }
                }
                Op::Gather { x, rows } => {
                    let xv = &self.values[x.0];
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, &g) in dx.row_mut(r).iter_mut().zip(dy.row(k)) {
                            *d += g;
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::ScatterSum { x, to } => {
                    let mut dx = Mat::zeros(to.len(), dy.cols);
                    for (k, &r) in to.iter().enumerate() {
                        dx.row_mut(k).copy_from_slice(dy.row(r));
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.needs_grad[b.0] {
                        self.accumulate(&mut grads, *b, dy.clone());
                    }
                    self.accumulate(&mut grads, *a, dy);
                }
                Op::Sub(a, b) => {
                    if self.needs_grad[b.0] {
                        let mut nb = dy.clone();
                        for v in &mut nb.data {
                            *v = -*v;
                        }
                        self.accumulate(&mut grads, *b, nb);
                    }
                    self.accumulate(&mut grads, *a, dy);
                }
                Op::Mask { x, mask } => {
                    let mut dx = dy;
                    for (d, &m) in dx.data.iter_mut().zip(&mask.data) {
                        *d *= m;
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Pick { x, cells } => {
                    let xv = &self.values[x.0];
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (p, &(r, c)) in cells.iter().enumerate() {
                        for (k, &g) in dy.row(p).iter().enumerate() {
                            dx.data[r * xv.cols + c + k] += g;
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::RowNorm(x) => {
                    let xv = &self.values[x.0];
                    let norms = &self.values[i];
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let n = norms.data[r];
                        if n > T::zero() {
                            let s = dy.data[r] / n;
                            for (d, &v) in dx.row_mut(r).iter_mut().zip(xv.row(r)) {
                                *d = s * v;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let xv = &self.values[x.0];
                    let dx = Mat::from_vec(xv.rows, xv.cols, vec![dy.data[0]; xv.data.len()]);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MeanSquare(x) => {
                    let xv = &self.values[x.0];
                    let s = dy.data[0] * T::of(2.0 / xv.data.len().max(1) as f64);
                    let dx = Mat::from_vec(
                        xv.rows,
                        xv.cols,
                        xv.data.iter().map(|&v| v * s).collect(),
                    );
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Scale(x, s) => {
                    let mut dx = dy;
                    for v in &mut dx.data {
                        *v *= *s;
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
        if !self.needs_grad[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}
