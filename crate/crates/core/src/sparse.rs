//! Compressed sparse row matrices and a deterministic triplet builder.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Collects `(row, col, value)` entries. Duplicates are summed in insertion order and
/// explicit zeros are kept, so the resulting pattern depends only on the pushes made.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    /// Adds `scale * block` with its top-left corner at `(row_off, col_off)`.
    pub fn push_block(&mut self, row_off: usize, col_off: usize, block: &SparseMatrix, scale: f64) {
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                self.push(row_off + r, col_off + c, scale * v);
            }
        }
    }

    /// Like [`push_block`](Self::push_block) but transposed.
    pub fn push_block_transposed(&mut self, row_off: usize, col_off: usize, block: &SparseMatrix, scale: f64) {
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                self.push(row_off + c, col_off + r, scale * v);
            }
        }
    }

    /// Like [`push_block`](Self::push_block) but only for entries where `keep(r, c)` holds,
    /// with `r`, `c` local to the block.
    pub fn push_block_filtered(
        &mut self,
        row_off: usize,
        col_off: usize,
        block: &SparseMatrix,
        scale: f64,
        keep: impl Fn(usize, usize) -> bool,
    ) {
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                if keep(r, c) {
                    self.push(row_off + r, col_off + c, scale * v);
                }
            }
        }
    }

    /// Transposed variant of [`push_block_filtered`](Self::push_block_filtered); `keep`
    /// receives the indices of the transposed block.
    pub fn push_block_transposed_filtered(
        &mut self,
        row_off: usize,
        col_off: usize,
        block: &SparseMatrix,
        scale: f64,
        keep: impl Fn(usize, usize) -> bool,
    ) {
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                if keep(c, r) {
                    self.push(row_off + c, col_off + r, scale * v);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn build(self) -> SparseMatrix {
        let n = self.vals.len();
        // stable counting sort by row
        let mut count = vec![0usize; self.nrows + 1];
        for &r in &self.rows {
            count[r + 1] += 1;
        }
        for i in 0..self.nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut order = vec![0usize; n];
        for (k, &r) in self.rows.iter().enumerate() {
            order[next[r]] = k;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        row_ptr.push(0);
        let mut scratch: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            scratch.clear();
            scratch.extend_from_slice(&order[count[r]..count[r + 1]]);
            scratch.sort_by_key(|&k| self.cols[k]);
            let mut last: Option<usize> = None;
            for &k in &scratch {
                let c = self.cols[k];
                if last == Some(c) {
                    *values.last_mut().unwrap() += self.vals[k];
                } else {
                    col_idx.push(c);
                    values.push(self.vals[k]);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut b = TripletBuilder::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
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

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    fn position(&self, r: usize, c: usize) -> Option<usize> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].binary_search(&c).ok().map(|k| span.start + k)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_add(x, 1.0, &mut y);
        y
    }

    /// `y += alpha * A x`
    pub fn mul_vec_add(&self, x: &[f64], alpha: f64, y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr += alpha * s;
        }
    }

    /// `y += alpha * A^T x`
    pub fn mul_transpose_vec_add(&self, x: &[f64], alpha: f64, y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for (r, &xr) in x.iter().enumerate() {
            let a = alpha * xr;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * a;
            }
        }
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.mul_transpose_vec_add(x, 1.0, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        let mut total = 0.0;
        for (r, &xr) in x.iter().enumerate() {
            let mut s = 0.0;
            for (c, v) in self.row(r) {
                s += v * y[c];
            }
            total += xr * s;
        }
        total
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                b.push(c, r, v);
            }
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Adds `scale * block` into existing entries at offset `(row_off, col_off)`.
    /// Every nonzero position of `block` must already be present in `self`.
    pub fn add_block_in_pattern(&mut self, row_off: usize, col_off: usize, block: &SparseMatrix, scale: f64) -> Result<()> {
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                let k = self
                    .position(row_off + r, col_off + c)
                    .ok_or_else(|| Error::InvalidInput(format!("entry ({}, {}) outside pattern", row_off + r, col_off + c)))?;
                self.values[k] += scale * v;
            }
        }
        Ok(())
    }

    /// Sum of `|a_ij|` over row `r`.
    pub fn row_abs_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v.abs()).sum()
    }

    pub fn row_abs_max(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows).map(|r| self.row_abs_sum(r)).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - sign * A^T|`; `sign = 1` measures asymmetry, `sign = -1` skew defect.
    pub fn max_abs_transpose_combination(&self, sign: f64) -> f64 {
        let t = self.transpose();
        let mut m: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m = m.max((v - sign * t.get(r, c)).abs());
            }
            for (c, v) in t.row(r) {
                m = m.max((self.get(r, c) - sign * v).abs());
            }
        }
        m
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        self.max_abs_transpose_combination(1.0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }

    /// Row sums, i.e. `A 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_kept() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.0);
        b.push(0, 1, 0.0);
        b.push(1, 2, 2.5);
        b.push(1, 0, -1.0);
        let m = b.build();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 3.5);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.col_idx(), &[1, 0, 2]);
    }

    #[test]
    fn transpose_and_matvec() {
        let m = SparseMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![0.0, -3.0, 4.0]]);
        let x = [1.0, 1.0, 2.0];
        assert_eq!(m.mul_vec(&x), vec![3.0, 5.0]);
        let t = m.transpose();
        assert_eq!(t.mul_vec(&[1.0, 1.0]), m.mul_transpose_vec(&[1.0, 1.0]));
        assert_eq!(m.bilinear(&[1.0, 2.0], &x), 3.0 + 10.0);
        assert_eq!(m.norm_inf(), 7.0);
    }

    #[test]
    fn add_in_pattern() {
        let mut m = SparseMatrix::identity(3);
        let blk = SparseMatrix::from_dense(&[vec![2.0]]);
        m.add_block_in_pattern(1, 1, &blk, 0.5).unwrap();
        assert_eq!(m.get(1, 1), 2.0);
        assert!(m.add_block_in_pattern(0, 1, &blk, 1.0).is_err());
    }
}
