//! Singular values by one-sided Jacobi, and the numerical rank built on it.
//!
//! One-sided Jacobi orthogonalizes the columns of a working copy with plane
//! rotations until every column pair is numerically orthogonal; the singular
//! values are then the column norms. Only singular values are needed in this
//! crate (rank decisions and condition estimates), so no U/V accumulation.

use super::DenseMatrix;
use crate::{Error, Result};

/// Pairs whose normalized inner product falls below this are treated as
/// already orthogonal.
const ORTHO_TOL: f64 = 1e-14;
/// A full sweep touches every column pair; well-conditioned inputs converge
/// in well under this many sweeps.
const MAX_SWEEPS: usize = 60;

/// Singular values of `m`, sorted descending.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.has_non_finite() {
        return Err(Error::NonFinite { context: "singular_values" });
    }
    // One-sided Jacobi wants rows >= cols; singular values are transpose
    // invariant.
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let mut a = work;
    let n = a.cols();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        // Columns whose norm has collapsed to rounding noise relative to the
        // largest column are frozen: the normalized inner product between two
        // noise columns is O(1) garbage, and rotating on it would keep every
        // sweep busy forever on rank-deficient inputs. Frozen columns keep
        // their (negligible) norms and simply sit out.
        let mut max_sq = 0.0f64;
        for j in 0..n {
            let sq: f64 = a.col(j).iter().map(|v| v * v).sum();
            max_sq = max_sq.max(sq);
        }
        let floor_sq = max_sq * 1e-24;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                {
                    let (head, tail) = a.as_slice().split_at(q * a.rows());
                    let cp = &head[p * a.rows()..(p + 1) * a.rows()];
                    let cq = &tail[..a.rows()];
                    for i in 0..cp.len() {
                        app += cp[i] * cp[i];
                        aqq += cq[i] * cq[i];
                        apq += cp[i] * cq[i];
                    }
                }
                if app <= floor_sq
                    || aqq <= floor_sq
                    || apq.abs() <= ORTHO_TOL * (app * aqq).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let rows = a.rows();
                let data = a.as_mut_slice();
                let (head, tail) = data.split_at_mut(q * rows);
                let cp = &mut head[p * rows..(p + 1) * rows];
                let cq = &mut tail[..rows];
                for i in 0..rows {
                    let vp = cp[i];
                    let vq = cq[i];
                    cp[i] = c * vp - s * vq;
                    cq[i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            let _ = sweep;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { context: "one-sided Jacobi SVD", iterations: MAX_SWEEPS });
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| a.col(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(sigma)
}

/// Number of singular values above `rel_tol * sigma_max`.
///
/// The default tolerance is `1e-9 * max(rows, cols)`, loose enough to absorb
/// accumulated rounding in the residual computations this crate feeds it,
/// and tight enough to separate the rank gaps the displacement certificates
/// produce (which are many orders of magnitude).
pub fn numerical_rank(m: &DenseMatrix, rel_tol: Option<f64>) -> Result<usize> {
    let tol = rel_tol.unwrap_or_else(|| 1e-9 * m.rows().max(m.cols()) as f64);
    let sigma = singular_values(m)?;
    let max = sigma.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|&&s| s > tol * max).count())
}

/// Number of singular values strictly above the absolute threshold `floor`.
///
/// [`numerical_rank`] grades a matrix against its own largest singular value,
/// which is the wrong yardstick for a residual that cancels to rounding
/// noise: noise measured against noise reads as full rank. Callers that know
/// the magnitude of the products a residual came from should count against
/// that external scale instead, so an identically-zero residual reliably
/// reports rank 0.
pub fn rank_above(m: &DenseMatrix, floor: f64) -> Result<usize> {
    let sigma = singular_values(m)?;
    Ok(sigma.iter().filter(|&&s| s > floor).count())
}

/// Spectral condition estimate `sigma_max / sigma_min` (infinite when the
/// smallest singular value underflows to zero).
pub fn condition_estimate(m: &DenseMatrix) -> Result<f64> {
    let sigma = singular_values(m)?;
    match (sigma.first(), sigma.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => Ok(max / min),
        (Some(_), Some(_)) => Ok(f64::INFINITY),
        _ => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_singular_values_are_absolute_entries() {
        let m = DenseMatrix::from_diag(&[3.0, -5.0, 1.0]);
        let s = singular_values(&m).unwrap();
        assert_relative_eq!(s[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_of_graded_diagonal_with_default_tol() {
        // default tol = 1e-9 * 3; 1e-3 stays, 1e-12 is cut
        let m = DenseMatrix::from_diag(&[1.0, 1e-3, 1e-12]);
        assert_eq!(numerical_rank(&m, None).unwrap(), 2);
    }

    #[test]
    fn absolute_floor_rank_ignores_noise_scale() {
        // A tiny Hilbert matrix is full rank against its own sigma_max but
        // rank 0 against an external floor set by an O(1) computation.
        let m = DenseMatrix::from_fn(4, 4, |i, j| 1e-15 / (i + j + 1) as f64);
        assert_eq!(numerical_rank(&m, None).unwrap(), 4);
        assert_eq!(rank_above(&m, 1e-9).unwrap(), 0);
        let graded = DenseMatrix::from_diag(&[3.0, 1e-12, 5e-13]);
        assert_eq!(rank_above(&graded, 1e-9).unwrap(), 1);
        assert_eq!(rank_above(&graded, 0.0).unwrap(), 3);
        assert_eq!(rank_above(&DenseMatrix::zeros(3, 3), 0.0).unwrap(), 0);
    }

    #[test]
    fn rank_is_invariant_under_permutations() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u = DenseMatrix::from_fn(16, 3, |_, _| rng.gen_range(-1.0..1.0));
        let v = DenseMatrix::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let m = u.matmul(&v.transpose()).unwrap();
        assert_eq!(numerical_rank(&m, None).unwrap(), 3);
        // Permuting rows and columns multiplies by orthogonal matrices, so
        // the singular values — and the rank — cannot move.
        for _ in 0..5 {
            let mut rows: Vec<usize> = (0..16).collect();
            let mut cols: Vec<usize> = (0..12).collect();
            for i in (1..rows.len()).rev() {
                rows.swap(i, rng.gen_range(0..=i));
            }
            for j in (1..cols.len()).rev() {
                cols.swap(j, rng.gen_range(0..=j));
            }
            let p = DenseMatrix::from_fn(16, 12, |i, j| m.get(rows[i], cols[j]));
            assert_eq!(numerical_rank(&p, None).unwrap(), 3);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let g = [1.0, -2.0, 0.5, 3.0];
        let h = [2.0, 1.0, -1.0, 0.25];
        let m = DenseMatrix::from_fn(4, 4, |i, j| g[i] * h[j]);
        assert_eq!(numerical_rank(&m, None).unwrap(), 1);
        let s = singular_values(&m).unwrap();
        let expect =
            g.iter().map(|v| v * v).sum::<f64>().sqrt() * h.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(s[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn frobenius_identity() {
        let m = DenseMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let s = singular_values(&m).unwrap();
        let fro2: f64 = s.iter().map(|v| v * v).sum();
        assert_relative_eq!(fro2, m.frobenius_norm().powi(2), epsilon = 1e-10);
    }

    #[test]
    fn wide_matrix_matches_tall_transpose() {
        let m = DenseMatrix::from_fn(2, 6, |i, j| (1 + i + 2 * j) as f64);
        let a = singular_values(&m).unwrap();
        let b = singular_values(&m.transpose()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_nan() {
        let mut m = DenseMatrix::zeros(2, 2);
        m.set(0, 0, f64::NAN);
        assert!(matches!(numerical_rank(&m, None), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let m = DenseMatrix::zeros(4, 4);
        assert_eq!(numerical_rank(&m, None).unwrap(), 0);
    }

    #[test]
    fn condition_of_diag() {
        let m = DenseMatrix::from_diag(&[8.0, 2.0]);
        assert_relative_eq!(condition_estimate(&m).unwrap(), 4.0, epsilon = 1e-12);
    }
}
