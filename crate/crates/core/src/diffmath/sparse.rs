use super::tensor::{axpy, Tensor};
use super::DiffError;

/// Row-compressed sparse real matrix.
///
/// Column indices within each row are strictly ascending and
/// `values.len() == col_idx.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets. Duplicate positions are an error.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, DiffError> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(DiffError::Shape(format!(
                    "sparse entry ({r},{c}) outside {rows}x{cols}"
                )));
            }
            if prev == Some((r, c)) {
                return Err(DiffError::Shape(format!(
                    "duplicate sparse entry ({r},{c})"
                )));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds directly from CSR arrays, validating the invariants.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, DiffError> {
        if row_ptr.len() != rows + 1 || col_idx.len() != values.len() {
            return Err(DiffError::Shape("inconsistent CSR arrays".into()));
        }
        if row_ptr[rows] != col_idx.len() {
            return Err(DiffError::Shape("row_ptr does not cover nnz".into()));
        }
        for r in 0..rows {
            let seg = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if seg.windows(2).any(|w| w[0] >= w[1]) || seg.iter().any(|&c| c >= cols) {
                return Err(DiffError::Shape(format!(
                    "row {r} column indices not strictly ascending or out of range"
                )));
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.nnz());
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// Iterator over (row, col, value) in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            self.row_range(r)
                .map(move |e| (r, self.col_idx[e], self.values[e]))
        })
    }

    /// Storage position of entry (r, c), if present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        let seg = &self.col_idx[range.clone()];
        seg.binary_search(&c).ok().map(|p| range.start + p)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            t.data[r * self.cols + c] = v;
        }
        t
    }

    /// `out += diag-weighted A · x`, where entry e is scaled by `weights[e]`
    /// (or its stored value when `weights` is `None`).
    pub(crate) fn spmm_into(&self, weights: Option<&[f64]>, x: &[f64], d: usize, out: &mut [f64]) {
        let w = weights.unwrap_or(&self.values);
        for r in 0..self.rows {
            let orow = &mut out[r * d..(r + 1) * d];
            for e in self.row_range(r) {
                let c = self.col_idx[e];
                axpy(w[e], &x[c * d..(c + 1) * d], orow);
            }
        }
    }

    /// `out += Aᵀ · y`, scattering row contributions into columns.
    pub(crate) fn spmm_t_into(
        &self,
        weights: Option<&[f64]>,
        y: &[f64],
        d: usize,
        out: &mut [f64],
    ) {
        let w = weights.unwrap_or(&self.values);
        for r in 0..self.rows {
            let yrow = &y[r * d..(r + 1) * d];
            for e in self.row_range(r) {
                let c = self.col_idx[e];
                axpy(w[e], yrow, &mut out[c * d..(c + 1) * d]);
            }
        }
    }

    /// Dense product `A · x`.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        if x.rows != self.cols {
            return Err(DiffError::Shape(format!(
                "spmm: {}x{} · {}x{}",
                self.rows, self.cols, x.rows, x.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, x.cols);
        self.spmm_into(None, &x.data, x.cols, &mut out.data);
        Ok(out)
    }
}
