//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse, accumulating adjoints, and adds the adjoints
//! of parameter leaves into a [`ParamStore`]. Non-differentiable decisions
//! (Top-K masks, token selection) enter the tape as constants.

use crate::error::{MilError, Result};
use crate::numerics::{softmax_in_place, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Hadamard(Var, Var),
    ScaleRows(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    L2NormalizeRows { x: Var, inv_norm: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    Pick { x: Var, r: usize, c: usize },
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> MilError {
    MilError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient is propagated to a store).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Loads a named parameter; its adjoint is accumulated by `backward`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(y, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).transpose()?;
        Ok(self.push(y, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        Ok(self.push(y, Op::Add(a, b)))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(op, ta, tr));
        }
        Ok(())
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut y = self.value(a).clone();
        for i in 0..y.rows() {
            for (v, b) in y.row_slice_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(y, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut y = self.value(a).clone();
        for i in 0..y.rows() {
            for (v, b) in y.row_slice_mut(i).iter_mut().zip(&r) {
                *v *= b;
            }
        }
        Ok(self.push(y, Op::MulRow(a, row)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("hadamard", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Hadamard(a, b)))
    }

    /// Scales row `i` of `a` by entry `i` of the `m × 1` column `s`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("scale_rows", ta, ts));
        }
        let mut y = ta.clone();
        for i in 0..y.rows() {
            let f = ts.data()[i];
            y.row_slice_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(y, Op::ScaleRows(a, s)))
    }

    /// Scales `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != 1 {
            return Err(shape_err("scale_by", ta, ts));
        }
        let f = ts.item();
        let y = ta.map(|v| v * f);
        Ok(self.push(y, Op::ScaleBy(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| v * c);
        self.push(y, Op::Scale(a, c))
    }

    /// Elementwise product with a constant tensor (e.g. a 0/1 mask).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(shape_err("mul_const", ta, &c));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(y, Op::MulConst(a, c)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for i in 0..y.rows() {
            softmax_in_place(y.row_slice_mut(i));
        }
        self.push(y, Op::SoftmaxRows(a))
    }

    /// Row softmax where columns with `keep[j] == false` get probability 0.
    pub fn masked_softmax_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        if keep.len() != ta.cols() {
            return Err(MilError::Input(format!(
                "mask length {} does not match {} columns",
                keep.len(),
                ta.cols()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(MilError::Input("softmax over an empty key set".into()));
        }
        if keep.iter().all(|&k| k) {
            return Ok(self.softmax_rows(a));
        }
        let mut y = ta.clone();
        for i in 0..y.rows() {
            let row = y.row_slice_mut(i);
            for (v, &k) in row.iter_mut().zip(keep) {
                if !k {
                    *v = f64::NEG_INFINITY;
                }
            }
            softmax_in_place(row);
        }
        Ok(self.push(y, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for i in 0..y.rows() {
            let row = y.row_slice_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(y, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardization to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        let n = y.cols() as f64;
        let mut inv_std = Vec::with_capacity(y.rows());
        for i in 0..y.rows() {
            let row = y.row_slice_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push(y, Op::LayerNormRows { x: a, inv_std })
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        let mut inv_norm = Vec::with_capacity(y.rows());
        for i in 0..y.rows() {
            let row = y.row_slice_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inv = 1.0 / norm.max(1e-12);
            row.iter_mut().for_each(|v| *v *= inv);
            inv_norm.push(inv);
        }
        self.push(y, Op::L2NormalizeRows { x: a, inv_norm })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| gelu_parts(x).0);
        self.push(y, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(f64::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let y = self.value(a).map(softplus);
        self.push(y, Op::Softplus(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if len == 0 || start + len > ta.cols() {
            return Err(MilError::Input(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for i in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(i)[start..start + len]);
        }
        let y = Tensor::matrix(ta.rows(), len, data)?;
        Ok(self.push(y, Op::SliceCols { x: a, start }))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if rows.is_empty() || rows.iter().any(|&r| r >= ta.rows()) {
            return Err(MilError::Input(format!(
                "row gather {rows:?} invalid for {:?}",
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * ta.cols());
        for &r in rows {
            data.extend_from_slice(ta.row_slice(r));
        }
        let y = Tensor::matrix(rows.len(), ta.cols(), data)?;
        Ok(self.push(
            y,
            Op::GatherRows {
                x: a,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let y = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    /// Column means: `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.rows() as f64;
        let mut out = vec![0.0; ta.cols()];
        for i in 0..ta.rows() {
            for (o, v) in out.iter_mut().zip(ta.row_slice(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m);
        self.push(Tensor::row(&out), Op::MeanRows(a))
    }

    /// Column maxima: `m × n → 1 × n`; the lowest row wins ties.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.row_slice(0).to_vec();
        let mut argmax = vec![0; ta.cols()];
        for i in 1..ta.rows() {
            for (j, &v) in ta.row_slice(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(Tensor::row(&out), Op::MaxRows { x: a, argmax })
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let y = Tensor::scalar(self.value(a).get(r, c));
        self.push(y, Op::Pick { x: a, r, c })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(y, Op::SumAll(a))
    }

    /// Back-propagates from the scalar `loss` and adds parameter adjoints
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(MilError::Input(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &dy, &mut grads)?;
            if let Op::Param(name) = &node.op {
                store.accumulate_grad(name, &dy);
            }
            grads[idx] = Some(dy);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, dy.matmul_nt(self.value(*b))?);
                acc(*b, self.value(*a).matmul_tn(dy)?);
            }
            Op::MatMulNT(a, b) => {
                acc(*a, dy.matmul(self.value(*b))?);
                acc(*b, dy.matmul_tn(self.value(*a))?);
            }
            Op::Transpose(a) => acc(*a, dy.transpose()?),
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::AddRow(a, r) => {
                acc(*a, dy.clone());
                acc(*r, column_sums(dy));
            }
            Op::MulRow(a, r) => {
                let ta = self.value(*a);
                let tr = self.value(*r);
                let mut da = dy.clone();
                let mut dr = vec![0.0; tr.cols()];
                for i in 0..dy.rows() {
                    let (g, x) = (dy.row_slice(i), ta.row_slice(i));
                    for j in 0..g.len() {
                        dr[j] += g[j] * x[j];
                    }
                    for (d, s) in da.row_slice_mut(i).iter_mut().zip(tr.data()) {
                        *d *= s;
                    }
                }
                acc(*a, da);
                acc(*r, Tensor::row(&dr));
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(dy, tb, |g, x| g * x));
                acc(*b, zip_map(dy, ta, |g, x| g * x));
            }
            Op::ScaleRows(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let mut da = dy.clone();
                let mut ds = vec![0.0; ts.rows()];
                for i in 0..dy.rows() {
                    let f = ts.data()[i];
                    ds[i] = dy
                        .row_slice(i)
                        .iter()
                        .zip(ta.row_slice(i))
                        .map(|(g, x)| g * x)
                        .sum();
                    da.row_slice_mut(i).iter_mut().for_each(|v| *v *= f);
                }
                acc(*a, da);
                acc(*s, Tensor::matrix(ts.rows(), 1, ds)?);
            }
            Op::ScaleBy(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let f = ts.item();
                let ds: f64 = dy.data().iter().zip(ta.data()).map(|(g, x)| g * x).sum();
                acc(*a, dy.map(|g| g * f));
                acc(*s, Tensor::new(ts.shape().to_vec(), vec![ds])?);
            }
            Op::Scale(a, c) => acc(*a, dy.map(|g| g * c)),
            Op::MulConst(a, c) => acc(*a, zip_map(dy, c, |g, m| g * m)),
            Op::SoftmaxRows(a) => {
                let mut dx = dy.clone();
                for i in 0..dy.rows() {
                    let (g, p) = (dy.row_slice(i), y.row_slice(i));
                    let dot: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                    for (j, d) in dx.row_slice_mut(i).iter_mut().enumerate() {
                        *d = p[j] * (g[j] - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let mut dx = dy.clone();
                for i in 0..dy.rows() {
                    let g = dy.row_slice(i);
                    let total: f64 = g.iter().sum();
                    let ls = y.row_slice(i);
                    for (j, d) in dx.row_slice_mut(i).iter_mut().enumerate() {
                        *d = g[j] - ls[j].exp() * total;
                    }
                }
                acc(*a, dx);
            }
            Op::LayerNormRows { x, inv_std } => {
                let n = dy.cols() as f64;
                let mut dx = dy.clone();
                for i in 0..dy.rows() {
                    let (g, xh) = (dy.row_slice(i), y.row_slice(i));
                    let mean_g = g.iter().sum::<f64>() / n;
                    let mean_gx = g.iter().zip(xh).map(|(g, x)| g * x).sum::<f64>() / n;
                    for (j, d) in dx.row_slice_mut(i).iter_mut().enumerate() {
                        *d = inv_std[i] * (g[j] - mean_g - xh[j] * mean_gx);
                    }
                }
                acc(*x, dx);
            }
            Op::L2NormalizeRows { x, inv_norm } => {
                let mut dx = dy.clone();
                for i in 0..dy.rows() {
                    let (g, u) = (dy.row_slice(i), y.row_slice(i));
                    let dot: f64 = g.iter().zip(u).map(|(g, u)| g * u).sum();
                    for (j, d) in dx.row_slice_mut(i).iter_mut().enumerate() {
                        *d = inv_norm[i] * (g[j] - u[j] * dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Gelu(a) => acc(*a, zip_map(dy, self.value(*a), |g, x| g * gelu_parts(x).1)),
            Op::Tanh(a) => acc(*a, zip_map(dy, y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(*a, zip_map(dy, y, |g, s| g * s * (1.0 - s))),
            Op::Softplus(a) => acc(*a, zip_map(dy, self.value(*a), |g, x| g * sigmoid(x))),
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let mut dx = Tensor::zeros(tx.shape());
                for i in 0..dy.rows() {
                    let len = dy.cols();
                    dx.row_slice_mut(i)[*start..start + len].copy_from_slice(dy.row_slice(i));
                }
                acc(*x, dx);
            }
            Op::GatherRows { x, rows } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (d, g) in dx.row_slice_mut(r).iter_mut().zip(dy.row_slice(k)) {
                        *d += g;
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatRows(parts) => {
                let cols = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let len = self.value(p).len();
                    let chunk = dy.data()[offset..offset + len].to_vec();
                    offset += len;
                    debug_assert_eq!(len % cols, 0);
                    acc(p, Tensor::new(shape, chunk)?);
                }
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let m = ta.rows() as f64;
                let mut dx = Tensor::zeros(ta.shape());
                for i in 0..ta.rows() {
                    for (d, g) in dx.row_slice_mut(i).iter_mut().zip(dy.data()) {
                        *d = g / m;
                    }
                }
                acc(*a, dx);
            }
            Op::MaxRows { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let cols = dx.cols();
                for (j, &r) in argmax.iter().enumerate() {
                    dx.data_mut()[r * cols + j] = dy.data()[j];
                }
                acc(*x, dx);
            }
            Op::Pick { x, r, c } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let cols = dx.cols();
                dx.data_mut()[r * cols + c] = dy.item();
                acc(*x, dx);
            }
            Op::SumAll(a) => acc(*a, Tensor::filled(self.value(*a).shape(), dy.item())),
        }
        Ok(())
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
            *o += v;
        }
    }
    Tensor::row(&out)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
