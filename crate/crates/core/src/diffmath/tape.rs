//! Tape-based reverse-mode differentiation over dense 2-D values.
//!
//! Every operation appends a node whose inputs already live on the tape, so
//! insertion order is a topological order and [`Tape::backward`] simply walks
//! the tape in reverse, visiting each node once. Nodes whose inputs are all
//! constants are recorded as constants and cost nothing during backward.

use std::sync::Arc;

use super::sparse::SparseMatrix;
use super::tensor::{axpy, dot, matmul_into, Tensor};
use super::DiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Spmm {
        matrix: Arc<SparseMatrix>,
        weights: Option<Var>,
        x: Var,
        transpose: bool,
    },
    Gather(Var, Arc<[usize]>),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Tanh(Var),
    Clamp(Var, f64, f64),
    NormalizeRows(Var),
    SqFrobenius(Var),
    RowDot(Var, Var),
    LogSumExpRows(Var),
    Custom(Vec<Var>, CustomBackward),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// A single-threaded recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> DiffError {
    DiffError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are only accumulated for leaves with
    /// `requires_grad` and anything downstream of them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = &self.nodes[v.0].value;
        debug_assert_eq!(t.len(), 1);
        t.data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(usize, usize), DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(sa)
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(x, y)| f(*x, *y))
                .collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.map(a, |x| alpha * x);
        self.push(out, Op::Scale(a, alpha), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// `x (n×k) + row (1×k)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, DiffError> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sr != (1, sx.1) {
            return Err(shape_err("add_row", sx, sr));
        }
        let rv = self.nodes[row.0].value.data.clone();
        let mut out = self.nodes[x.0].value.clone();
        for r in 0..out.rows {
            axpy(1.0, &rv, out.row_mut(r));
        }
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        matmul_into(
            &self.nodes[a.0].value.data,
            &self.nodes[b.0].value.data,
            &mut out.data,
            sa.0,
            sa.1,
            sb.1,
        );
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a (m×d) · bᵀ (d×n)`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_bt", sa, sb));
        }
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Tensor::zeros(sa.0, sb.0);
        for i in 0..sa.0 {
            let ar = ta.row(i);
            for j in 0..sb.0 {
                out.data[i * sb.0 + j] = dot(ar, tb.row(j));
            }
        }
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    fn spmm_impl(
        &mut self,
        matrix: &Arc<SparseMatrix>,
        weights: Option<Var>,
        x: Var,
        transpose: bool,
    ) -> Result<Var, DiffError> {
        let sx = self.shape(x);
        let (inner, outer) = if transpose {
            (matrix.rows(), matrix.cols())
        } else {
            (matrix.cols(), matrix.rows())
        };
        if sx.0 != inner {
            return Err(shape_err("spmm", (matrix.rows(), matrix.cols()), sx));
        }
        if let Some(w) = weights {
            if self.shape(w) != (matrix.nnz(), 1) {
                return Err(shape_err("spmm weights", (matrix.nnz(), 1), self.shape(w)));
            }
        }
        let d = sx.1;
        let mut out = Tensor::zeros(outer, d);
        {
            let wdata = weights.map(|w| self.nodes[w.0].value.data.as_slice());
            let xdata = &self.nodes[x.0].value.data;
            if transpose {
                matrix.spmm_t_into(wdata, xdata, d, &mut out.data);
            } else {
                matrix.spmm_into(wdata, xdata, d, &mut out.data);
            }
        }
        let inputs: Vec<Var> = weights.into_iter().chain(std::iter::once(x)).collect();
        let op = Op::Spmm {
            matrix: Arc::clone(matrix),
            weights,
            x,
            transpose,
        };
        Ok(self.push(out, op, &inputs))
    }

    /// `A · x` with the matrix's stored values.
    pub fn spmm(&mut self, matrix: &Arc<SparseMatrix>, x: Var) -> Result<Var, DiffError> {
        self.spmm_impl(matrix, None, x, false)
    }

    /// `Aᵀ · x` with the matrix's stored values.
    pub fn spmm_t(&mut self, matrix: &Arc<SparseMatrix>, x: Var) -> Result<Var, DiffError> {
        self.spmm_impl(matrix, None, x, true)
    }

    /// `A · x` where the stored values are replaced by the differentiable
    /// per-entry `weights` (nnz×1, storage order).
    pub fn spmm_weighted(
        &mut self,
        matrix: &Arc<SparseMatrix>,
        weights: Var,
        x: Var,
        transpose: bool,
    ) -> Result<Var, DiffError> {
        self.spmm_impl(matrix, Some(weights), x, transpose)
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let t = &self.nodes[x.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows) {
            return Err(DiffError::Shape(format!(
                "gather_rows: index {bad} out of {} rows",
                t.rows
            )));
        }
        let mut out = Tensor::zeros(indices.len(), t.cols);
        for (o, &i) in indices.iter().enumerate() {
            out.row_mut(o).copy_from_slice(t.row(i));
        }
        let idx: Arc<[usize]> = indices.into();
        Ok(self.push(out, Op::Gather(x, idx), &[x]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(shape_err("concat_cols", sa, sb));
        }
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Tensor::zeros(sa.0, sa.1 + sb.1);
        for r in 0..sa.0 {
            let row = out.row_mut(r);
            row[..sa.1].copy_from_slice(ta.row(r));
            row[sa.1..].copy_from_slice(tb.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("concat_rows", sa, sb));
        }
        let mut data = self.nodes[a.0].value.data.clone();
        data.extend_from_slice(&self.nodes[b.0].value.data);
        let out = Tensor::from_vec(sa.0 + sb.0, sa.1, data);
        Ok(self.push(out, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = &self.nodes[x.0].value;
        if start + len > t.rows {
            return Err(DiffError::Shape(format!(
                "slice_rows: {start}+{len} exceeds {} rows",
                t.rows
            )));
        }
        let data = t.data[start * t.cols..(start + len) * t.cols].to_vec();
        let out = Tensor::from_vec(len, t.cols, data);
        Ok(self.push(out, Op::SliceRows(x, start), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean over all entries; the mean of an empty value is 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let m = if t.is_empty() {
            0.0
        } else {
            t.data.iter().sum::<f64>() / t.len() as f64
        };
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        if let Some(v) = self.nodes[x.0].value.data.iter().find(|v| !(**v > 0.0)) {
            return Err(DiffError::Domain(format!("log of non-positive value {v}")));
        }
        let out = self.map(x, f64::ln);
        Ok(self.push(out, Op::Log(x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// `ln(1 + eˣ)`, numerically stable.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.map(x, softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(x, |v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = &self.nodes[x.0].value;
        let mut out = t.clone();
        for r in 0..t.rows {
            let n = dot(t.row(r), t.row(r)).sqrt();
            if !(n > 0.0) {
                return Err(DiffError::Domain(format!("row {r} has zero norm")));
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(out, Op::NormalizeRows(x), &[x]))
    }

    pub fn sq_frobenius(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sq_norm();
        self.push(Tensor::scalar(s), Op::SqFrobenius(x), &[x])
    }

    /// Per-row inner product of two equally shaped values, n×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, _) = self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = (0..n).map(|r| dot(ta.row(r), tb.row(r))).collect();
        let out = Tensor::from_vec(n, 1, data);
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Row-wise `log Σ exp`, n×1.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let data = (0..t.rows).map(|r| logsumexp(t.row(r))).collect();
        let out = Tensor::from_vec(t.rows, 1, data);
        self.push(out, Op::LogSumExpRows(x), &[x])
    }

    /// Registers an op with a caller-supplied backward rule. The closure
    /// receives input values, the output value and the output gradient, and
    /// returns one gradient buffer per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>> + 'static,
    ) -> Var {
        self.push(
            value,
            Op::Custom(inputs.to_vec(), Box::new(backward)),
            inputs,
        )
    }

    /// Sums several equally shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var, DiffError> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| DiffError::Shape("add_all of nothing".into()))?;
        rest.iter().try_fold(*first, |acc, v| self.add(acc, *v))
    }

    /// Reverse pass from a scalar root; gradients accumulate additively.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if self.shape(root) != (1, 1) {
            let (r, c) = self.shape(root);
            return Err(DiffError::NonScalarRoot(r, c));
        }
        self.grads = Vec::with_capacity(self.nodes.len());
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn add_grad(&mut self, v: Var, contrib: &[f64]) {
        if let Some(buf) = self.acc(v) {
            axpy(1.0, contrib, buf);
        }
    }

    fn elementwise_grad(&mut self, x: Var, g: &[f64], f: impl Fn(f64, f64) -> f64) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let contrib: Vec<f64> = self.nodes[x.0]
            .value
            .data
            .iter()
            .zip(g)
            .map(|(xv, gv)| f(*xv, *gv))
            .collect();
        self.add_grad(x, &contrib);
    }

    fn output_grad(&mut self, i: usize, x: Var, g: &[f64], f: impl Fn(f64, f64) -> f64) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let contrib: Vec<f64> = self.nodes[i]
            .value
            .data
            .iter()
            .zip(g)
            .map(|(yv, gv)| f(*yv, *gv))
            .collect();
        self.add_grad(x, &contrib);
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so the node table can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_grad(*b, &neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    let c: Vec<f64> = self.nodes[b.0]
                        .value
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, y)| x * y)
                        .collect();
                    self.add_grad(a, &c);
                }
                if self.nodes[b.0].requires_grad {
                    let c: Vec<f64> = self.nodes[a.0]
                        .value
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, y)| x * y)
                        .collect();
                    self.add_grad(b, &c);
                }
            }
            Op::Scale(a, alpha) => {
                let alpha = *alpha;
                if let Some(buf) = self.acc(*a) {
                    axpy(alpha, g, buf);
                }
            }
            Op::AddScalar(a) => self.add_grad(*a, g),
            Op::AddRow(x, row) => {
                self.add_grad(*x, g);
                let cols = self.nodes[row.0].value.cols;
                if let Some(buf) = self.acc(*row) {
                    for chunk in g.chunks(cols) {
                        axpy(1.0, chunk, buf);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.shape(a);
                let n = self.shape(b).1;
                if self.nodes[a.0].requires_grad {
                    // dA = g · Bᵀ
                    let bt = self.nodes[b.0].value.transpose();
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt.data, &mut da, m, n, k);
                    self.add_grad(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · g
                    let at = self.nodes[a.0].value.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at.data, g, &mut db, k, m, n);
                    self.add_grad(b, &db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (a, b) = (*a, *b);
                let (m, d) = self.shape(a);
                let n = self.shape(b).0;
                if self.nodes[a.0].requires_grad {
                    // dA = g (m×n) · B (n×d)
                    let mut da = vec![0.0; m * d];
                    matmul_into(g, &self.nodes[b.0].value.data, &mut da, m, n, d);
                    self.add_grad(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = gᵀ (n×m) · A (m×d)
                    let gt = Tensor::from_vec(m, n, g.to_vec()).transpose();
                    let mut db = vec![0.0; n * d];
                    matmul_into(&gt.data, &self.nodes[a.0].value.data, &mut db, n, m, d);
                    self.add_grad(b, &db);
                }
            }
            Op::Spmm {
                matrix,
                weights,
                x,
                transpose,
            } => {
                let (x, transpose) = (*x, *transpose);
                let d = self.shape(x).1;
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                    {
                        let w = weights.map(|w| self.nodes[w.0].value.data.as_slice());
                        if transpose {
                            matrix.spmm_into(w, g, d, &mut dx);
                        } else {
                            matrix.spmm_t_into(w, g, d, &mut dx);
                        }
                    }
                    self.add_grad(x, &dx);
                }
                if let Some(w) = *weights {
                    if self.nodes[w.0].requires_grad {
                        let xd = &self.nodes[x.0].value.data;
                        let mut dw = vec![0.0; matrix.nnz()];
                        let (rp, ci) = (matrix.row_ptr(), matrix.col_idx());
                        for r in 0..matrix.rows() {
                            for e in rp[r]..rp[r + 1] {
                                let c = ci[e];
                                dw[e] = if transpose {
                                    dot(&g[c * d..(c + 1) * d], &xd[r * d..(r + 1) * d])
                                } else {
                                    dot(&g[r * d..(r + 1) * d], &xd[c * d..(c + 1) * d])
                                };
                            }
                        }
                        self.add_grad(w, &dw);
                    }
                }
            }
            Op::Gather(x, idx) => {
                let cols = self.nodes[x.0].value.cols;
                if let Some(buf) = self.acc(*x) {
                    for (o, &r) in idx.iter().enumerate() {
                        axpy(
                            1.0,
                            &g[o * cols..(o + 1) * cols],
                            &mut buf[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let (ca, cb) = (self.shape(a).1, self.shape(b).1);
                let w = ca + cb;
                if let Some(buf) = self.acc(a) {
                    for (r, chunk) in g.chunks(w).enumerate() {
                        axpy(1.0, &chunk[..ca], &mut buf[r * ca..(r + 1) * ca]);
                    }
                }
                if let Some(buf) = self.acc(b) {
                    for (r, chunk) in g.chunks(w).enumerate() {
                        axpy(1.0, &chunk[ca..], &mut buf[r * cb..(r + 1) * cb]);
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a.0].value.len();
                self.add_grad(a, &g[..na]);
                self.add_grad(b, &g[na..]);
            }
            Op::SliceRows(x, start) => {
                let cols = self.nodes[x.0].value.cols;
                let off = start * cols;
                if let Some(buf) = self.acc(*x) {
                    axpy(1.0, g, &mut buf[off..off + g.len()]);
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(buf) = self.acc(*x) {
                    buf.iter_mut().for_each(|b| *b += g0);
                }
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len().max(1) as f64;
                let g0 = g[0] / n;
                if let Some(buf) = self.acc(*x) {
                    buf.iter_mut().for_each(|b| *b += g0);
                }
            }
            Op::Exp(x) => self.output_grad(i, *x, g, |y, gv| y * gv),
            Op::Log(x) => self.elementwise_grad(*x, g, |xv, gv| gv / xv),
            Op::Sigmoid(x) => self.output_grad(i, *x, g, |y, gv| y * (1.0 - y) * gv),
            Op::Softplus(x) => self.elementwise_grad(*x, g, |xv, gv| sigmoid(xv) * gv),
            Op::Relu(x) => self.elementwise_grad(*x, g, |xv, gv| if xv > 0.0 { gv } else { 0.0 }),
            Op::Tanh(x) => self.output_grad(i, *x, g, |y, gv| (1.0 - y * y) * gv),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise_grad(*x, g, |xv, gv| if xv > lo && xv < hi { gv } else { 0.0 })
            }
            Op::NormalizeRows(x) => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let (xt, yt) = (&self.nodes[x.0].value, &self.nodes[i].value);
                    let cols = xt.cols;
                    let mut dx = vec![0.0; xt.len()];
                    for r in 0..xt.rows {
                        let n = dot(xt.row(r), xt.row(r)).sqrt();
                        let yr = yt.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yg = dot(yr, gr);
                        for c in 0..cols {
                            dx[r * cols + c] = (gr[c] - yr[c] * yg) / n;
                        }
                    }
                    self.add_grad(x, &dx);
                }
            }
            Op::SqFrobenius(x) => {
                let g0 = g[0];
                self.elementwise_grad(*x, &vec![g0; self.nodes[x.0].value.len()], |xv, gv| {
                    2.0 * xv * gv
                })
            }
            Op::RowDot(a, b) => {
                let (a, b) = (*a, *b);
                let cols = self.shape(a).1;
                for (dst, src) in [(a, b), (b, a)] {
                    if !self.nodes[dst.0].requires_grad {
                        continue;
                    }
                    let mut contrib = self.nodes[src.0].value.data.clone();
                    for (r, chunk) in contrib.chunks_mut(cols.max(1)).enumerate() {
                        chunk.iter_mut().for_each(|v| *v *= g[r]);
                    }
                    self.add_grad(dst, &contrib);
                }
            }
            Op::LogSumExpRows(x) => {
                let x = *x;
                if self.nodes[x.0].requires_grad {
                    let xt = &self.nodes[x.0].value;
                    let lse = &self.nodes[i].value.data;
                    let cols = xt.cols;
                    let mut dx = vec![0.0; xt.len()];
                    for r in 0..xt.rows {
                        for c in 0..cols {
                            dx[r * cols + c] = (xt.data[r * cols + c] - lse[r]).exp() * g[r];
                        }
                    }
                    self.add_grad(x, &dx);
                }
            }
            Op::Custom(inputs, backward) => {
                let contribs = {
                    let vals: Vec<&Tensor> =
                        inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    backward(&vals, &self.nodes[i].value, g)
                };
                for (v, c) in inputs.iter().zip(contribs) {
                    self.add_grad(*v, &c);
                }
            }
        }
        self.nodes[i].op = op;
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
