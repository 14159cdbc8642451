//! LU factorization with partial pivoting, for the dense solves behind the
//! Sylvester oracle and matrix inverses at test scale.

use super::DenseMatrix;
use crate::{Error, Result};

/// Packed LU factors (`L` unit lower, `U` upper, row permutation `piv`).
pub struct LuFactors {
    lu: DenseMatrix,
    piv: Vec<usize>,
    /// max |u_kk| / min |u_kk|, a cheap order-of-magnitude condition proxy.
    diag_ratio: f64,
}

impl LuFactors {
    /// Factor a square matrix. Fails with a condition estimate when a pivot
    /// falls below `n * eps * max|entry|` — for Sylvester systems this is
    /// exactly the overlapping-spectra case.
    pub fn factor(m: &DenseMatrix) -> Result<LuFactors> {
        if m.rows() != m.cols() {
            return Err(Error::DimMismatch { context: "LU factor", expected: m.rows(), got: m.cols() });
        }
        if m.has_non_finite() {
            return Err(Error::NonFinite { context: "LU factor" });
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = lu.as_slice().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let singular_tol = scale * f64::EPSILON * n.max(1) as f64;
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            // partial pivot: largest magnitude in column k at or below row k
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in (k + 1)..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= singular_tol {
                let cond = if best == 0.0 { f64::INFINITY } else { max_pivot.max(scale) / best };
                return Err(Error::IllConditioned { condition: cond });
            }
            if p != k {
                piv.swap(k, p);
                for j in 0..n {
                    let a = lu.get(k, j);
                    let b = lu.get(p, j);
                    lu.set(k, j, b);
                    lu.set(p, j, a);
                }
            }
            let pivot = lu.get(k, k);
            max_pivot = max_pivot.max(pivot.abs());
            min_pivot = min_pivot.min(pivot.abs());
            let inv = 1.0 / pivot;
            for i in (k + 1)..n {
                let l = lu.get(i, k) * inv;
                lu.set(i, k, l);
            }
            // rank-1 update of the trailing block, column by column so the
            // inner loop walks contiguous memory
            for j in (k + 1)..n {
                let ukj = lu.get(k, j);
                if ukj == 0.0 {
                    continue;
                }
                let rows = n;
                let (lcol, jcol) = {
                    let data = lu.as_mut_slice();
                    let (head, tail) = data.split_at_mut(j * rows);
                    (&head[k * rows..(k + 1) * rows], &mut tail[..rows])
                };
                for i in (k + 1)..n {
                    jcol[i] -= lcol[i] * ukj;
                }
            }
        }
        let diag_ratio = if min_pivot > 0.0 { max_pivot / min_pivot } else { f64::INFINITY };
        Ok(LuFactors { lu, piv, diag_ratio })
    }

    /// Ratio of largest to smallest pivot magnitude.
    pub fn diag_ratio(&self) -> f64 {
        self.diag_ratio
    }

    /// Solve `A x = b` for one right-hand side.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(Error::DimMismatch { context: "LU solve", expected: n, got: b.len() });
        }
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        // forward: L y = P b (unit diagonal)
        for k in 0..n {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            let col = self.lu.col(k);
            for i in (k + 1)..n {
                x[i] -= col[i] * xk;
            }
        }
        // back: U x = y
        for k in (0..n).rev() {
            x[k] /= self.lu.get(k, k);
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            let col = self.lu.col(k);
            for i in 0..k {
                x[i] -= col[i] * xk;
            }
        }
        Ok(x)
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> Result<DenseMatrix> {
        let n = self.lu.rows();
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let x = self.solve(&e)?;
            out.col_mut(j).copy_from_slice(&x);
            e[j] = 0.0;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solve_small_system() {
        // [[2,1],[1,3]] x = [5,10] -> x = [1, 3]
        let a = DenseMatrix::from_fn(2, 2, |i, j| [[2.0, 1.0], [1.0, 3.0]][i][j]);
        let f = LuFactors::factor(&a).unwrap();
        let x = f.solve(&[5.0, 10.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let n = 8;
        let a = DenseMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0
            } else {
                ((i * n + j) as f64 * 0.9).sin()
            }
        });
        let inv = LuFactors::factor(&a).unwrap().inverse().unwrap();
        let prod = a.matmul(&inv).unwrap();
        let err = prod.sub(&DenseMatrix::identity(n)).unwrap().frobenius_norm();
        assert!(err < 1e-10, "A * inv(A) off identity by {err}");
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = DenseMatrix::from_fn(3, 3, |i, j| (i + j) as f64); // rank 2
        assert!(matches!(LuFactors::factor(&a), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_fn(2, 2, |i, j| [[0.0, 1.0], [1.0, 0.0]][i][j]);
        let f = LuFactors::factor(&a).unwrap();
        let x = f.solve(&[2.0, 7.0]).unwrap();
        assert_relative_eq!(x[0], 7.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
    }
}
