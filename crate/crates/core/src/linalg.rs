//! Minimal dense matrix support for the steering pipeline.
//!
//! Everything here operates on small matrices (tens of rows, feature
//! dimension well under a thousand), so plain row-major storage and
//! textbook algorithms are sufficient. Only the pieces the pipeline
//! needs are implemented.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("matrix is singular or not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },
}

/// Row-major dense matrix of `f64`.
///
/// Serializes as a nested list of rows so it can appear directly in the
/// JSON interfaces (solver instances, query/key dumps).
#[derive(Debug, Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a flat row-major buffer. Panics if the buffer length
    /// does not equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    /// Build from nested rows. Panics if rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged row in matrix literal");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Build a matrix whose columns are the given equal-length vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        Mat::from_fn(r, c, |i, j| {
            assert_eq!(cols[j].len(), r, "ragged column in matrix literal");
            cols[j][i]
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the rows selected by `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Mat {
        let mut picked = Vec::new();
        for &i in indices {
            assert!(i < self.rows, "row index {i} out of range {}", self.rows);
            picked.extend_from_slice(self.row(i));
        }
        let rows = picked.len() / self.cols.max(1);
        Mat::from_vec(rows, self.cols, picked)
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matmul inner dimensions",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let lhs = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(lhs) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                context: "matvec inner dimensions",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: v.len(),
                right_cols: 1,
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "elementwise subtraction",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(Mat::from_rows(&rows))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Solve `A X = B` for symmetric positive definite `A` via Cholesky,
/// with one step of iterative refinement. `B` may have any column count.
///
/// Fails with [`LinalgError::NotPositiveDefinite`] when a pivot is not
/// strictly positive, which for Gram matrices means rank deficiency.
pub(crate) fn solve_spd(a: &Mat, b: &Mat) -> Result<Mat, LinalgError> {
    if a.rows != a.cols || a.rows != b.rows {
        return Err(LinalgError::DimensionMismatch {
            context: "spd solve shapes",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let chol = cholesky(a)?;
    let mut x = chol_solve(&chol, b);
    // One refinement pass keeps the residual near machine precision even
    // for moderately conditioned Gram matrices.
    let r = b.sub(&a.matmul(&x).expect("shapes checked"))?;
    let dx = chol_solve(&chol, &r);
    for (xi, di) in x.data.iter_mut().zip(&dx.data) {
        *xi += di;
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &Mat) -> Result<Mat, LinalgError> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(LinalgError::NotPositiveDefinite { pivot: i });
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve with a precomputed Cholesky factor: forward then back substitution.
fn chol_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.rows;
    let m = b.cols;
    let mut y = b.clone();
    for col in 0..m {
        for i in 0..n {
            let mut v = y.get(i, col);
            for k in 0..i {
                v -= l.get(i, k) * y.get(k, col);
            }
            y.set(i, col, v / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut v = y.get(i, col);
            for k in i + 1..n {
                v -= l.get(k, i) * y.get(k, col);
            }
            y.set(i, col, v / l.get(i, i));
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Mat::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_nested(), vec![vec![19.0, 22.0], vec![43.0, 50.0]]);
    }

    #[test]
    fn matmul_rejects_mismatched_shapes() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spd_solve_recovers_known_solution() {
        // A = [[4,1],[1,3]], x = [1,2], b = A x = [6,7]
        let a = Mat::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let b = Mat::from_rows(&[vec![6.0], vec![7.0]]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((x.get(1, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_reports_singular_matrix() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let b = Mat::identity(2);
        assert!(matches!(
            solve_spd(&a, &b),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn serde_round_trips_nested_rows() {
        let m = Mat::from_rows(&[vec![1.5, -2.0], vec![0.0, 3.25]]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[[1.5,-2.0],[0.0,3.25]]");
        let back: Mat = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn serde_rejects_ragged_rows() {
        let res: Result<Mat, _> = serde_json::from_str("[[1.0,2.0],[3.0]]");
        assert!(res.is_err());
    }
}
