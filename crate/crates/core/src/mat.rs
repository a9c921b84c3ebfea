//! Minimal row-major `f64` matrix for the network and raster code.
//!
//! Deliberately small: dense storage, the three matmul variants backprop
//! needs, and element access.  No BLAS dependency keeps the numeric path
//! fully deterministic (fixed summation order).

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Wraps an existing row-major buffer; panics if the length mismatches.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length must equal rows*cols");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "inner dimensions must agree");
        let mut out = Mat::zeros(self.rows, b.cols);
        // i-k-j order: the inner loop walks contiguous rows of `b` and `out`,
        // which autovectorizes well.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = b.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        out
    }

    /// `selfᵀ · b`; used for weight gradients without materializing transposes.
    pub fn matmul_at(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "outer dimensions must agree");
        let mut out = Mat::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = b.row(r);
            for (i, &a_ri) in a_row.iter().enumerate() {
                let out_row = out.row_mut(i);
                for (o, &b_rj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ri * b_rj;
                }
            }
        }
        out
    }

    /// `self · bᵀ`; used to push gradients back through a linear layer.
    pub fn matmul_bt(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "inner dimensions must agree");
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = b.row(j);
                let mut acc = 0.0;
                for (&a_ik, &b_jk) in a_row.iter().zip(b_row) {
                    acc += a_ik * b_jk;
                }
                *o = acc;
            }
        }
        out
    }

    /// Adds `bias` to every row; panics on length mismatch.
    pub fn add_row_bias(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols, "bias length must equal cols");
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Element-wise sum of same-shape matrices.
    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    /// In-place `self += scale * other` for same-shape matrices.
    pub fn add_scaled(&mut self, other: &Mat, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn arange(rows: usize, cols: usize, start: f64) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|i| start + 0.25 * i as f64).collect())
    }

    #[test]
    fn matmul_matches_naive() {
        let a = arange(3, 4, -1.0);
        let b = arange(4, 5, 0.5);
        assert_eq!(a.matmul(&b), naive_matmul(&a, &b));
    }

    #[test]
    fn matmul_at_matches_explicit_transpose() {
        let a = arange(5, 3, 2.0);
        let b = arange(5, 4, -0.75);
        let mut at = Mat::zeros(3, 5);
        for r in 0..5 {
            for c in 0..3 {
                at.set(c, r, a.get(r, c));
            }
        }
        assert_eq!(a.matmul_at(&b), naive_matmul(&at, &b));
    }

    #[test]
    fn matmul_bt_matches_explicit_transpose() {
        let a = arange(4, 6, 1.0);
        let b = arange(2, 6, -0.5);
        let mut bt = Mat::zeros(6, 2);
        for r in 0..2 {
            for c in 0..6 {
                bt.set(c, r, b.get(r, c));
            }
        }
        assert_eq!(a.matmul_bt(&b), naive_matmul(&a, &bt));
    }

    #[test]
    fn bias_and_add_scaled() {
        let mut m = Mat::zeros(2, 3);
        m.add_row_bias(&[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[1.0, 2.0, 3.0]);
        let other = Mat::from_vec(2, 3, vec![1.0; 6]);
        m.add_scaled(&other, -1.0);
        assert_eq!(m.row(0), &[0.0, 1.0, 2.0]);
    }
}
