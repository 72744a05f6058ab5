//! Dense and sparse matrix containers shared across the crate.
//!
//! These are deliberately small: row-major `f64` / `i64` storage with the
//! handful of operations the simulator, solvers and the autodiff engine need.

use serde::{Deserialize, Serialize};

use crate::error::{AmodError, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for j in 0..rhs.cols {
                    orow[j] += a * row[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }

    /// Max absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = AmodError;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        let rows = v.len();
        let cols = v.first().map_or(0, |r| r.len());
        if v.iter().any(|r| r.len() != cols) {
            return Err(AmodError::InvalidArgument("ragged matrix rows".into()));
        }
        Ok(Mat {
            rows,
            cols,
            data: v.into_iter().flatten().collect(),
        })
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

/// Dense row-major matrix of `i64`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i64>>", into = "Vec<Vec<i64>>")]
pub struct IntMat {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMat {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let mut m = IntMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x as f64).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for IntMat {
    type Output = i64;
    fn index(&self, (i, j): (usize, usize)) -> &i64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for IntMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut i64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl TryFrom<Vec<Vec<i64>>> for IntMat {
    type Error = AmodError;
    fn try_from(v: Vec<Vec<i64>>) -> Result<Self> {
        let rows = v.len();
        let cols = v.first().map_or(0, |r| r.len());
        if v.iter().any(|r| r.len() != cols) {
            return Err(AmodError::InvalidArgument("ragged matrix rows".into()));
        }
        Ok(IntMat {
            rows,
            cols,
            data: v.into_iter().flatten().collect(),
        })
    }
}

impl From<IntMat> for Vec<Vec<i64>> {
    fn from(m: IntMat) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

/// Sparse symmetric matrix in triplet form, used for graph propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMat {
    pub n: usize,
    /// (row, col, weight) triplets, one per stored entry.
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseMat {
    /// y = S * x for dense x (n x f).
    pub fn matmul_dense(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.n, "spmm shape mismatch");
        let f = x.cols();
        let mut out = Mat::zeros(self.n, f);
        for &(i, j, w) in &self.triplets {
            for k in 0..f {
                out[(i, k)] += w * x[(j, k)];
            }
        }
        out
    }

    /// Transpose-multiply: y = S^T * x. Used by the backward pass.
    pub fn t_matmul_dense(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.n, "spmm shape mismatch");
        let f = x.cols();
        let mut out = Mat::zeros(self.n, f);
        for &(i, j, w) in &self.triplets {
            for k in 0..f {
                out[(j, k)] += w * x[(i, k)];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for &(i, j, w) in &self.triplets {
            m[(i, j)] += w;
        }
        m
    }
}
