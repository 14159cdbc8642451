//! Iterative radix-2 complex FFT with a batched variant.
//!
//! The forward transform uses the kernel `exp(-2*pi*i*j*k/N)`; the inverse
//! uses the conjugate kernel and divides by `N`, so `inverse(forward(x)) = x`
//! up to rounding. Lengths must be powers of two; callers that need other
//! lengths pad at a higher layer (see `poly_mult`) or take a slow path.

use std::cell::Cell;

use crate::{Error, Result};

thread_local! {
    static TWIDDLE_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Self-test hook: while enabled, every transform plan built on this thread
/// perturbs its first twiddle factor, so all FFT-backed kernels compute
/// wrong answers. The `check` command flips this to prove its correctness
/// suites can actually fail; nothing else should ever turn it on.
pub fn set_twiddle_fault(enabled: bool) {
    TWIDDLE_FAULT.with(|f| f.set(enabled));
}

fn twiddle_fault_enabled() -> bool {
    TWIDDLE_FAULT.with(|f| f.get())
}

/// Complex vector stored as separate real and imaginary arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBuffer {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexBuffer {
    /// Zero buffer of length `n`.
    pub fn zeros(n: usize) -> Self {
        ComplexBuffer { re: vec![0.0; n], im: vec![0.0; n] }
    }

    /// Buffer with the given real part and zero imaginary part.
    pub fn from_real(re: &[f64]) -> Self {
        ComplexBuffer { re: re.to_vec(), im: vec![0.0; re.len()] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Twiddle factors and bit-reversal table for one transform size, computed
/// once per (batched) call and shared across items.
struct Plan {
    size: usize,
    /// `exp(-2*pi*i*k/size)` for `k < size/2`.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
    /// Bit-reversed index for every position.
    rev: Vec<u32>,
}

impl Plan {
    fn new(size: usize) -> Plan {
        let half = size / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for k in 0..half {
            let angle = -2.0 * std::f64::consts::PI * k as f64 / size as f64;
            tw_re.push(angle.cos());
            tw_im.push(angle.sin());
        }
        let bits = size.trailing_zeros();
        let mut rev = vec![0u32; size];
        for (i, r) in rev.iter_mut().enumerate() {
            *r = (i as u32).reverse_bits() >> (32 - bits.max(1)) as u32;
        }
        if size == 1 {
            rev[0] = 0;
        }
        if twiddle_fault_enabled() {
            if let Some(w) = tw_re.first_mut() {
                *w += 1e-3;
            }
        }
        Plan { size, tw_re, tw_im, rev }
    }

    /// In-place transform of one item. `inverse` conjugates the kernel and
    /// applies the `1/N` scale.
    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.size;
        if n == 1 {
            return;
        }
        for i in 0..n {
            let j = self.rev[i] as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            let half = len / 2;
            let mut base = 0;
            while base < n {
                for k in 0..half {
                    let (wr, wi) = {
                        let w = k * stride;
                        if inverse {
                            (self.tw_re[w], -self.tw_im[w])
                        } else {
                            (self.tw_re[w], self.tw_im[w])
                        }
                    };
                    let a = base + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
                base += len;
            }
            len <<= 1;
        }
        if inverse {
            let scale = 1.0 / n as f64;
            for v in re.iter_mut() {
                *v *= scale;
            }
            for v in im.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// In-place FFT of a single buffer. Errors unless the length is a power of
/// two (length 1 is a no-op).
pub fn fft(buf: &mut ComplexBuffer, inverse: bool) -> Result<()> {
    let n = buf.len();
    if !super::is_power_of_two(n) {
        return Err(Error::InvalidLength { len: n });
    }
    Plan::new(n).run(&mut buf.re, &mut buf.im, inverse);
    Ok(())
}

/// In-place FFT of `count` contiguous items of length `size` stored
/// back-to-back in `re`/`im`. The twiddle tables are computed once and
/// shared across the batch, which is what makes many small transforms cheap.
pub fn batched_fft(re: &mut [f64], im: &mut [f64], size: usize, inverse: bool) -> Result<()> {
    if !super::is_power_of_two(size) {
        return Err(Error::InvalidLength { len: size });
    }
    if re.len() != im.len() || re.len() % size != 0 {
        return Err(Error::DimMismatch {
            context: "batched_fft",
            expected: re.len(),
            got: im.len(),
        });
    }
    let plan = Plan::new(size);
    for (r, i) in re.chunks_mut(size).zip(im.chunks_mut(size)) {
        plan.run(r, i, inverse);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn impulse_transforms_to_flat_spectrum() {
        let mut buf = ComplexBuffer::from_real(&[1.0, 0.0, 0.0, 0.0]);
        fft(&mut buf, false).unwrap();
        for k in 0..4 {
            assert_relative_eq!(buf.re[k], 1.0, epsilon = 1e-12);
            assert_relative_eq!(buf.im[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shifted_impulse_gives_fourth_roots() {
        // DFT of e_1 at length 4 is (1, -i, -1, i).
        let mut buf = ComplexBuffer::from_real(&[0.0, 1.0, 0.0, 0.0]);
        fft(&mut buf, false).unwrap();
        let expect = [(1.0, 0.0), (0.0, -1.0), (-1.0, 0.0), (0.0, 1.0)];
        for (k, (er, ei)) in expect.iter().enumerate() {
            assert_relative_eq!(buf.re[k], er, epsilon = 1e-12);
            assert_relative_eq!(buf.im[k], ei, epsilon = 1e-12);
        }
    }

    #[test]
    fn round_trip_recovers_input() {
        let n = 256;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let orig: Vec<f64> = (0..n).map(|_| next()).collect();
        let mut buf = ComplexBuffer::from_real(&orig);
        fft(&mut buf, false).unwrap();
        fft(&mut buf, true).unwrap();
        for k in 0..n {
            assert_relative_eq!(buf.re[k], orig[k], epsilon = 1e-12);
            assert_relative_eq!(buf.im[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn parseval_energy_identity() {
        let x = [3.0, -1.0, 2.0, 0.5, -0.25, 4.0, 1.0, -2.0];
        let time: f64 = x.iter().map(|v| v * v).sum();
        let mut buf = ComplexBuffer::from_real(&x);
        fft(&mut buf, false).unwrap();
        let freq: f64 =
            buf.re.iter().zip(&buf.im).map(|(r, i)| r * r + i * i).sum::<f64>() / x.len() as f64;
        assert_relative_eq!(time, freq, epsilon = 1e-10);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut buf = ComplexBuffer::zeros(12);
        assert_eq!(fft(&mut buf, false), Err(Error::InvalidLength { len: 12 }));
    }

    #[test]
    fn batched_matches_single() {
        let items: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..8).map(|k| ((i * 8 + k) as f64 * 0.37).sin()).collect())
            .collect();
        let mut re: Vec<f64> = items.concat();
        let mut im = vec![0.0; re.len()];
        batched_fft(&mut re, &mut im, 8, false).unwrap();
        for (i, item) in items.iter().enumerate() {
            let mut single = ComplexBuffer::from_real(item);
            fft(&mut single, false).unwrap();
            for k in 0..8 {
                assert_relative_eq!(re[i * 8 + k], single.re[k], epsilon = 1e-12);
                assert_relative_eq!(im[i * 8 + k], single.im[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn length_one_is_identity() {
        let mut buf = ComplexBuffer::from_real(&[42.0]);
        fft(&mut buf, false).unwrap();
        assert_relative_eq!(buf.re[0], 42.0);
        fft(&mut buf, true).unwrap();
        assert_relative_eq!(buf.re[0], 42.0);
    }
}
