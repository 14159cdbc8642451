//! Dense kernels: column-major matrices, radix-2 FFTs, polynomial products,
//! Jacobi singular values, and LU solves.
//!
//! Everything at this layer is deliberately plain `f64` with explicit loops:
//! these routines are the oracles the structured fast paths are checked
//! against, so they favor being obviously correct over being clever.

mod fft;
mod lu;
mod poly;
mod svd;

pub use fft::{batched_fft, fft, set_twiddle_fault, ComplexBuffer};
pub use lu::LuFactors;
pub use poly::{poly_mult, Polynomial};
pub use svd::{condition_estimate, numerical_rank, rank_above, singular_values};

use crate::{Error, Result};

/// Column-major dense matrix of `f64`.
///
/// Entry `(i, j)` lives at `data[j * rows + i]`; a column is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// All-zero `rows x cols` matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from a column-major buffer. `data.len()` must be `rows * cols`.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "DenseMatrix::from_column_major",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Build entry-wise from a closure `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Square matrix with `d` on the diagonal.
    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i] = v;
    }

    /// Contiguous column slice.
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Mutable contiguous column slice.
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Underlying column-major buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * other` by plain triple loop (column-major friendly order).
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                context: "matmul",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                let a_col = self.col(k);
                let out_col = out.col_mut(j);
                for i in 0..self.rows {
                    out_col[i] += a_col[i] * b;
                }
            }
        }
        Ok(out)
    }

    /// Entry-wise sum.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Entry-wise difference.
    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimMismatch {
                context,
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data })
    }

    /// Multiply every entry by `s`.
    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }

    /// True if any entry is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

/// `m * x` for a dense matrix; the reference implementation every structured
/// product is measured against.
pub fn dense_matvec(m: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.cols() {
        return Err(Error::DimMismatch { context: "dense_matvec", expected: m.cols(), got: x.len() });
    }
    let mut y = vec![0.0; m.rows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = m.col(j);
        for i in 0..m.rows() {
            y[i] += col[i] * xj;
        }
    }
    Ok(y)
}

/// Round `n` up to the next power of two (`n = 0` maps to 1).
pub fn next_power_of_two(n: usize) -> usize {
    n.next_power_of_two()
}

/// True when `n` is a power of two (and nonzero).
pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_identity_returns_input() {
        let m = DenseMatrix::identity(4);
        let x = [1.0, -2.0, 3.0, 0.5];
        let y = dense_matvec(&m, &x).unwrap();
        for (a, b) in y.iter().zip(x.iter()) {
            assert_relative_eq!(a, b);
        }
    }

    #[test]
    fn matvec_rejects_wrong_length() {
        let m = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            dense_matvec(&m, &[1.0, 2.0, 3.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn matmul_against_hand_example() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = DenseMatrix::from_fn(2, 2, |i, j| [[1.0, 2.0], [3.0, 4.0]][i][j]);
        let b = DenseMatrix::from_fn(2, 2, |i, j| [[5.0, 6.0], [7.0, 8.0]][i][j]);
        let c = a.matmul(&b).unwrap();
        let expect = [[19.0, 22.0], [43.0, 50.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(c.get(i, j), expect[i][j]);
            }
        }
    }

    #[test]
    fn transpose_involution() {
        let m = DenseMatrix::from_fn(3, 5, |i, j| (i * 7 + j) as f64);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn column_major_layout() {
        let m = DenseMatrix::from_column_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 1), 4.0);
    }
}
