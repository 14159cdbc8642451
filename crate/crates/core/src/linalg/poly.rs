//! Real polynomials with FFT-backed multiplication.

use super::{batched_fft, next_power_of_two};
use crate::Result;

/// Polynomial with real coefficients in ascending order:
/// `coeffs[k]` multiplies `x^k`. An empty coefficient vector is the zero
/// polynomial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    /// Degree, or `None` for the zero polynomial (all coefficients zero).
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    /// Evaluate at `x` by Horner's rule.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Product of two polynomials via a zero-padded FFT.
///
/// The inputs are padded to the next power of two at or above the product
/// length `a.len() + b.len() - 1`, multiplied pointwise in the frequency
/// domain, and transformed back; the result is truncated to the exact
/// product length. Coefficients therefore carry FFT rounding on the order of
/// `1e-15 * |a| * |b|`, which every consumer tolerance in this crate absorbs.
pub fn poly_mult(a: &Polynomial, b: &Polynomial) -> Result<Polynomial> {
    if a.coeffs.is_empty() || b.coeffs.is_empty() {
        return Ok(Polynomial::zero());
    }
    let out_len = a.coeffs.len() + b.coeffs.len() - 1;
    let size = next_power_of_two(out_len);
    // Both operands share one batched buffer so the twiddle tables are
    // computed once.
    let mut re = vec![0.0; 2 * size];
    let mut im = vec![0.0; 2 * size];
    re[..a.coeffs.len()].copy_from_slice(&a.coeffs);
    re[size..size + b.coeffs.len()].copy_from_slice(&b.coeffs);
    batched_fft(&mut re, &mut im, size, false)?;
    let (ra, rb) = re.split_at_mut(size);
    let (ia, ib) = im.split_at_mut(size);
    for k in 0..size {
        let pr = ra[k] * rb[k] - ia[k] * ib[k];
        let pi = ra[k] * ib[k] + ia[k] * rb[k];
        ra[k] = pr;
        ia[k] = pi;
    }
    batched_fft(&mut re[..size], &mut im[..size], size, true)?;
    re.truncate(out_len);
    Ok(Polynomial::new(re))
}

#[cfg(test)]
pub(crate) fn poly_mult_schoolbook(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.coeffs.is_empty() || b.coeffs.is_empty() {
        return Polynomial::zero();
    }
    let mut out = vec![0.0; a.coeffs.len() + b.coeffs.len() - 1];
    for (i, &ai) in a.coeffs.iter().enumerate() {
        for (j, &bj) in b.coeffs.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    Polynomial::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn small_product_by_hand() {
        // (1 + 2x)(3 + x) = 3 + 7x + 2x^2
        let p = poly_mult(&Polynomial::new(vec![1.0, 2.0]), &Polynomial::new(vec![3.0, 1.0]))
            .unwrap();
        assert_eq!(p.coeffs.len(), 3);
        assert_relative_eq!(p.coeffs[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(p.coeffs[1], 7.0, epsilon = 1e-9);
        assert_relative_eq!(p.coeffs[2], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_factor_gives_zero() {
        let p = poly_mult(&Polynomial::zero(), &Polynomial::new(vec![1.0, 2.0])).unwrap();
        assert!(p.coeffs.is_empty());
        assert_eq!(p.degree(), None);
    }

    #[test]
    fn product_length_is_exact() {
        let a = Polynomial::new(vec![1.0; 5]);
        let b = Polynomial::new(vec![1.0; 9]);
        assert_eq!(poly_mult(&a, &b).unwrap().coeffs.len(), 13);
    }

    proptest! {
        #[test]
        fn matches_schoolbook(
            a in proptest::collection::vec(-10.0f64..10.0, 1..40),
            b in proptest::collection::vec(-10.0f64..10.0, 1..40),
        ) {
            let pa = Polynomial::new(a);
            let pb = Polynomial::new(b);
            let fast = poly_mult(&pa, &pb).unwrap();
            let slow = poly_mult_schoolbook(&pa, &pb);
            prop_assert_eq!(fast.coeffs.len(), slow.coeffs.len());
            for (f, s) in fast.coeffs.iter().zip(&slow.coeffs) {
                prop_assert!((f - s).abs() < 1e-9, "coefficient mismatch: {} vs {}", f, s);
            }
        }

        #[test]
        fn commutative(
            a in proptest::collection::vec(-10.0f64..10.0, 1..16),
            b in proptest::collection::vec(-10.0f64..10.0, 1..16),
        ) {
            let ab = poly_mult(&Polynomial::new(a.clone()), &Polynomial::new(b.clone())).unwrap();
            let ba = poly_mult(&Polynomial::new(b), &Polynomial::new(a)).unwrap();
            prop_assert_eq!(ab.coeffs.len(), ba.coeffs.len());
            for (x, y) in ab.coeffs.iter().zip(&ba.coeffs) {
                prop_assert!((x - y).abs() < 1e-9, "commutativity gap: {} vs {}", x, y);
            }
        }

        #[test]
        fn associative(
            a in proptest::collection::vec(-10.0f64..10.0, 1..16),
            b in proptest::collection::vec(-10.0f64..10.0, 1..16),
            c in proptest::collection::vec(-10.0f64..10.0, 1..16),
        ) {
            let pa = Polynomial::new(a);
            let pb = Polynomial::new(b);
            let pc = Polynomial::new(c);
            let left = poly_mult(&poly_mult(&pa, &pb).unwrap(), &pc).unwrap();
            let right = poly_mult(&pa, &poly_mult(&pb, &pc).unwrap()).unwrap();
            prop_assert_eq!(left.coeffs.len(), right.coeffs.len());
            for (x, y) in left.coeffs.iter().zip(&right.coeffs) {
                prop_assert!((x - y).abs() < 1e-9, "associativity gap: {} vs {}", x, y);
            }
        }

        #[test]
        fn degree_adds(
            da in 0usize..30,
            db in 0usize..30,
        ) {
            let mut a = vec![0.0; da + 1];
            let mut b = vec![0.0; db + 1];
            *a.last_mut().unwrap() = 1.5;
            *b.last_mut().unwrap() = -2.0;
            let p = poly_mult(&Polynomial::new(a), &Polynomial::new(b)).unwrap();
            // rounding can leave ~1e-16 dust, so test the structural length
            prop_assert_eq!(p.coeffs.len(), da + db + 1);
            prop_assert!((p.coeffs[da + db] - -3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_horner() {
        let p = Polynomial::new(vec![1.0, -2.0, 3.0]); // 1 - 2x + 3x^2
        assert_relative_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
    }
}
