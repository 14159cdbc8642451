//! Near-linear-time multiplication kernels for the compressed representation.
//!
//! The centerpiece is [`krylov_transpose_multiply`]: for a strictly
//! subdiagonal operator `A` it computes every `K(A, vᵢ)ᵀ uⱼ` in
//! `O((b+r)·n·log²n + b·r·n·log n)` by a breadth-first bottom-up
//! divide-and-conquer over the index range. Each subrange carries a small
//! resolvent state — edge polynomials for the `u` and `v` sides plus a single
//! monomial corner — and merging two ranges costs one polynomial product,
//! realized as batched FFTs shared across all subproblems of a depth. Its
//! adjoint [`krylov_multiply`] runs the same dataflow in reverse (the
//! transposition principle), giving `Σᵢ K(A, vᵢ)·cᵢ` at the same cost.
//!
//! [`ldr_sd_matvec`] composes the two kernels into a full multiply by the
//! represented matrix; operators with a nonzero corner or a non-power-of-two
//! size fall back to an `O(n²r)` Krylov-recurrence path. [`circulant_matvec`]
//! and [`toeplitz_like_matvec`] are the specialized `O(n log n)` kernels for
//! fixed shift operators.
//!
//! Every batched FFT issued by the fast transpose path is visible through the
//! thread-local trace ([`start_fft_trace`]/[`take_fft_trace`]), which the
//! accounting tests use to pin the round structure: exactly `log2 n` depths,
//! size `2^{d+1}` with `(b+r)·n/2^{d+1}` items at depth `d`.

use std::cell::RefCell;

use crate::displacement::{LdrMatrix, Operator};
use crate::error::{Error, Result};
use crate::linalg::{batched_fft, is_power_of_two, DenseMatrix};

/// One batched-FFT invocation observed while a trace is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FftCall {
    /// Merge depth that issued the call (0 merges single indices into pairs).
    pub depth: usize,
    /// Transform size.
    pub size: usize,
    /// Number of independent transforms in the batch.
    pub items: usize,
    /// True for inverse transforms.
    pub inverse: bool,
}

thread_local! {
    static FFT_TRACE: RefCell<Option<Vec<FftCall>>> = const { RefCell::new(None) };
}

/// Begins recording batched-FFT calls on this thread.
pub fn start_fft_trace() {
    FFT_TRACE.with(|t| *t.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns the calls observed since [`start_fft_trace`].
pub fn take_fft_trace() -> Vec<FftCall> {
    FFT_TRACE.with(|t| t.borrow_mut().take().unwrap_or_default())
}

fn traced_fft(
    re: &mut [f64],
    im: &mut [f64],
    size: usize,
    items: usize,
    inverse: bool,
    depth: usize,
) -> Result<()> {
    FFT_TRACE.with(|t| {
        if let Some(calls) = t.borrow_mut().as_mut() {
            calls.push(FftCall { depth, size, items, inverse });
        }
    });
    batched_fft(&mut re[..items * size], &mut im[..items * size], size, inverse)
}

/// Coefficient tensor indexed `(i, j, k)` with `i < r`, `j < b`, `k < n`;
/// the `k`-slices are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor {
    r: usize,
    b: usize,
    n: usize,
    data: Vec<f64>,
}

impl CoeffTensor {
    pub fn zeros(r: usize, b: usize, n: usize) -> CoeffTensor {
        CoeffTensor { r, b, n, data: vec![0.0; r * b * n] }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.b + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.b + j) * self.n + k] = v;
    }

    /// Contiguous coefficient slice for the `(i, j)` pair.
    pub fn slice(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.b + j) * self.n;
        &self.data[base..base + self.n]
    }

    fn slice_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.b + j) * self.n;
        &mut self.data[base..base + self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Extracts the subdiagonal entries of an operator accepted by the fast path:
/// `Subdiagonal` with corner exactly zero, or the plain down-shift `Z_0`.
fn strict_subdiagonal(op: &Operator) -> Result<Vec<f64>> {
    match op {
        Operator::Subdiagonal { sub, corner } if *corner == 0.0 => Ok(sub.clone()),
        Operator::Shift { n, f } if *f == 0.0 => Ok(vec![1.0; n.saturating_sub(1)]),
        Operator::Subdiagonal { .. } | Operator::Shift { .. } => Err(Error::Config {
            message: "fast Krylov kernels require a zero corner; route through the slow path"
                .into(),
        }),
        _ => Err(Error::Config {
            message: "fast Krylov kernels require a subdiagonal operator".into(),
        }),
    }
}

fn check_fast_size(n: usize) -> Result<()> {
    if !is_power_of_two(n) {
        return Err(Error::InvalidLength { len: n });
    }
    Ok(())
}

/// Per-depth resolvent data for a strictly subdiagonal operator: the `v`-edge
/// polynomials of every block (concatenated, block-major) and the corner
/// monomial coefficients. Snapshots are taken per depth because the adjoint
/// pass consumes them in reverse order.
struct ResolventTable {
    /// `s10_by_depth[d]` is the `r × n` slab of `v`-edge polynomials at entry
    /// to depth `d`: column `i`'s block `p` occupies `[i·n + p·2^d, i·n + (p+1)·2^d)`.
    s10_by_depth: Vec<Vec<f64>>,
    /// `corners_by_depth[d][p]` is the corner coefficient of block `p` at
    /// entry to depth `d` (the product of the subdiagonal entries inside).
    corners_by_depth: Vec<Vec<f64>>,
}

impl ResolventTable {
    /// Builds the table for all `log2(n)` depths in `O(r·n·log n)`.
    fn build(s: &[f64], v: &DenseMatrix) -> ResolventTable {
        let n = v.rows();
        let r = v.cols();
        let depths = n.trailing_zeros() as usize;
        let mut s10 = vec![0.0; r * n];
        for i in 0..r {
            s10[i * n..(i + 1) * n].copy_from_slice(v.col(i));
        }
        let mut corners = vec![1.0; n];
        let mut s10_by_depth = Vec::with_capacity(depths);
        let mut corners_by_depth = Vec::with_capacity(depths);
        let mut tmp = vec![0.0; n / 2.max(1)];
        for d in 0..depths {
            s10_by_depth.push(s10.clone());
            corners_by_depth.push(corners.clone());
            let m = 1 << d;
            let pairs = n / (2 * m);
            for q in 0..pairs {
                let a = s[q * 2 * m + m - 1];
                let scale = a * corners[2 * q + 1];
                for i in 0..r {
                    let base = i * n + q * 2 * m;
                    tmp[..m].copy_from_slice(&s10[base..base + m]);
                    s10.copy_within(base + m..base + 2 * m, base);
                    for t in 0..m {
                        s10[base + m + t] = scale * tmp[t];
                    }
                }
            }
            let mut next_corners = Vec::with_capacity(pairs);
            for q in 0..pairs {
                let a = s[q * 2 * m + m - 1];
                next_corners.push(a * corners[2 * q] * corners[2 * q + 1]);
            }
            corners = next_corners;
        }
        ResolventTable { s10_by_depth, corners_by_depth }
    }
}

/// All inner products with Krylov columns at once: entry `(i, j, k)` of the
/// result is `uⱼᵀ Aᵏ vᵢ`, i.e. the `k`-th coefficient of `K(A, vᵢ)ᵀ uⱼ`.
///
/// `s` must be strictly subdiagonal and `n` a power of two; other inputs are
/// errors that direct the caller to the dense/slow path.
pub fn krylov_transpose_multiply(
    s_op: &Operator,
    v: &DenseMatrix,
    u: &DenseMatrix,
) -> Result<CoeffTensor> {
    let s = strict_subdiagonal(s_op)?;
    let n = s_op.n();
    check_fast_size(n)?;
    if v.rows() != n || u.rows() != n {
        return Err(Error::DimMismatch {
            context: "krylov_transpose_multiply",
            expected: n,
            got: if v.rows() != n { v.rows() } else { u.rows() },
        });
    }
    let r = v.cols();
    let b = u.cols();
    let mut acc = CoeffTensor::zeros(r, b, n);

    // Leaf contributions: coefficient 0 of every pair is the plain dot product.
    for i in 0..r {
        for j in 0..b {
            let mut dot = 0.0;
            for p in 0..n {
                dot += v.get(p, i) * u.get(p, j);
            }
            acc.set(i, j, 0, dot);
        }
    }
    if n == 1 {
        return Ok(acc);
    }

    // Edge-polynomial slabs, block-major within each column.
    let mut s01 = vec![0.0; b * n];
    for j in 0..b {
        s01[j * n..(j + 1) * n].copy_from_slice(u.col(j));
    }
    let mut s10 = vec![0.0; r * n];
    for i in 0..r {
        s10[i * n..(i + 1) * n].copy_from_slice(v.col(i));
    }
    let mut corners = vec![1.0; n];

    let depths = n.trailing_zeros() as usize;
    // Forward slab holds the right S01 blocks then the left S10 blocks, each
    // zero-padded to the doubled length; its total size is (b+r)·n at every depth.
    let mut fwd_re = vec![0.0; (b + r) * n];
    let mut fwd_im = vec![0.0; (b + r) * n];
    let mut prod_re = vec![0.0; r * b * n];
    let mut prod_im = vec![0.0; r * b * n];
    let mut tmp = vec![0.0; n / 2];

    for d in 0..depths {
        let m = 1usize << d;
        let size = 2 * m;
        let pairs = n / size;
        let items = (b + r) * pairs;

        fwd_re[..items * size].fill(0.0);
        fwd_im[..items * size].fill(0.0);
        // Item layout: S01 right halves first (j-major), then S10 left halves.
        for j in 0..b {
            for q in 0..pairs {
                let dst = (j * pairs + q) * size;
                let src = j * n + q * size + m;
                fwd_re[dst..dst + m].copy_from_slice(&s01[src..src + m]);
            }
        }
        let s10_off = b * pairs;
        for i in 0..r {
            for q in 0..pairs {
                let dst = (s10_off + i * pairs + q) * size;
                let src = i * n + q * size;
                fwd_re[dst..dst + m].copy_from_slice(&s10[src..src + m]);
            }
        }
        traced_fft(&mut fwd_re, &mut fwd_im, size, items, false, d)?;

        // Cross terms of all pairs summed in the frequency domain.
        let fq = r * b;
        prod_re[..fq * size].fill(0.0);
        prod_im[..fq * size].fill(0.0);
        for q in 0..pairs {
            let a = s[q * size + m - 1];
            if a == 0.0 {
                continue;
            }
            for i in 0..r {
                let gbase = (s10_off + i * pairs + q) * size;
                for j in 0..b {
                    let ubase = (j * pairs + q) * size;
                    let pbase = (i * b + j) * size;
                    for t in 0..size {
                        let gr = fwd_re[gbase + t];
                        let gi = fwd_im[gbase + t];
                        let ur = fwd_re[ubase + t];
                        let ui = fwd_im[ubase + t];
                        prod_re[pbase + t] += a * (gr * ur - gi * ui);
                        prod_im[pbase + t] += a * (gr * ui + gi * ur);
                    }
                }
            }
        }
        traced_fft(&mut prod_re, &mut prod_im, size, fq, true, d)?;
        for i in 0..r {
            for j in 0..b {
                let pbase = (i * b + j) * size;
                let out = acc.slice_mut(i, j);
                // The product has degree < size-1 and enters shifted by one
                // (the connecting entry contributes the extra power).
                for t in 0..size - 1 {
                    out[1 + t] += prod_re[pbase + t];
                }
            }
        }

        // Merge the edge states in the time domain.
        for q in 0..pairs {
            let a = s[q * size + m - 1];
            let scale_l = a * corners[2 * q];
            let scale_r = a * corners[2 * q + 1];
            for j in 0..b {
                let base = j * n + q * size;
                for t in 0..m {
                    s01[base + m + t] *= scale_l;
                }
            }
            for i in 0..r {
                let base = i * n + q * size;
                tmp[..m].copy_from_slice(&s10[base..base + m]);
                s10.copy_within(base + m..base + size, base);
                for t in 0..m {
                    s10[base + m + t] = scale_r * tmp[t];
                }
            }
        }
        for q in 0..pairs {
            let a = s[q * size + m - 1];
            corners[q] = a * corners[2 * q] * corners[2 * q + 1];
        }
        corners.truncate(pairs);
    }
    Ok(acc)
}

/// The adjoint kernel: `Y` with column `j` equal to `Σᵢ K(A, vᵢ)·c(i, j, ·)`.
///
/// This is the transpose of [`krylov_transpose_multiply`] as a linear map in
/// `U`, obtained by running its dataflow backwards; the two satisfy
/// `⟨kt(U), C⟩ = ⟨U, km(C)⟩` exactly in exact arithmetic.
pub fn krylov_multiply(s_op: &Operator, v: &DenseMatrix, coeffs: &CoeffTensor) -> Result<DenseMatrix> {
    let s = strict_subdiagonal(s_op)?;
    let n = s_op.n();
    check_fast_size(n)?;
    if v.rows() != n || coeffs.n() != n || coeffs.r() != v.cols() {
        return Err(Error::DimMismatch {
            context: "krylov_multiply",
            expected: n,
            got: coeffs.n(),
        });
    }
    let r = v.cols();
    let b = coeffs.b();
    let mut y = DenseMatrix::zeros(n, b);

    // Constant-coefficient leaf terms.
    for j in 0..b {
        let col = y.col_mut(j);
        for i in 0..r {
            let c0 = coeffs.get(i, j, 0);
            for p in 0..n {
                col[p] += v.get(p, i) * c0;
            }
        }
    }
    if n == 1 {
        return Ok(y);
    }

    let table = ResolventTable::build(&s, v);
    let depths = n.trailing_zeros() as usize;

    // Reverse-mode edge sensitivities, same slab layout as the forward pass.
    let mut s01_bar = vec![0.0; b * n];
    let mut cbar_re = vec![0.0; r * b * n];
    let mut cbar_im = vec![0.0; r * b * n];
    let mut g_re = vec![0.0; r * n];
    let mut g_im = vec![0.0; r * n];
    let mut out_re = vec![0.0; b * n];
    let mut out_im = vec![0.0; b * n];

    for d in (0..depths).rev() {
        let m = 1usize << d;
        let size = 2 * m;
        let pairs = n / size;
        let s10 = &table.s10_by_depth[d];
        let corners = &table.corners_by_depth[d];

        // Sensitivity slices of the accumulator: window [1, 2m) is shared by
        // every pair at this depth, so it is transformed once.
        let fq = r * b;
        cbar_re[..fq * size].fill(0.0);
        cbar_im[..fq * size].fill(0.0);
        for i in 0..r {
            for j in 0..b {
                let base = (i * b + j) * size;
                let slice = coeffs.slice(i, j);
                cbar_re[base..base + size - 1].copy_from_slice(&slice[1..size]);
            }
        }
        traced_fft(&mut cbar_re, &mut cbar_im, size, fq, false, d)?;

        // Left S10 blocks of every pair.
        let g_items = r * pairs;
        g_re[..g_items * size].fill(0.0);
        g_im[..g_items * size].fill(0.0);
        for i in 0..r {
            for q in 0..pairs {
                let dst = (i * pairs + q) * size;
                let src = i * n + q * size;
                g_re[dst..dst + m].copy_from_slice(&s10[src..src + m]);
            }
        }
        traced_fft(&mut g_re, &mut g_im, size, g_items, false, d)?;

        // Correlation of each C̄ slice with each left edge polynomial,
        // summed over i: out(j, q) = Σᵢ conj(Ĝ(i, q))·C̄(i, j).
        let out_items = b * pairs;
        out_re[..out_items * size].fill(0.0);
        out_im[..out_items * size].fill(0.0);
        for q in 0..pairs {
            let a = s[q * size + m - 1];
            if a == 0.0 {
                continue;
            }
            for j in 0..b {
                let obase = (j * pairs + q) * size;
                for i in 0..r {
                    let gbase = (i * pairs + q) * size;
                    let cbase = (i * b + j) * size;
                    for t in 0..size {
                        let gr = g_re[gbase + t];
                        let gi = -g_im[gbase + t];
                        let cr = cbar_re[cbase + t];
                        let ci = cbar_im[cbase + t];
                        out_re[obase + t] += a * (gr * cr - gi * ci);
                        out_im[obase + t] += a * (gr * ci + gi * cr);
                    }
                }
            }
        }
        traced_fft(&mut out_re, &mut out_im, size, out_items, true, d)?;

        // Child sensitivities: the left half of each block passes through
        // unchanged; the right half combines the concat scaling with the
        // correlation term, truncated to the child length.
        for q in 0..pairs {
            let a = s[q * size + m - 1];
            for j in 0..b {
                let base = j * n + q * size;
                let scale_l = a * corners[2 * q];
                let obase = (j * pairs + q) * size;
                for t in 0..m {
                    s01_bar[base + m + t] =
                        scale_l * s01_bar[base + m + t] + out_re[obase + t];
                }
            }
        }
    }

    for j in 0..b {
        let col = y.col_mut(j);
        for p in 0..n {
            col[p] += s01_bar[j * n + p];
        }
    }
    Ok(y)
}

/// `O(n²·r·b)` reference path: works for every operator variant and size by
/// running the Krylov recurrences directly.
pub fn ldr_matvec_slow(m: &LdrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    let n = m.n();
    if x.rows() != n {
        return Err(Error::DimMismatch { context: "ldr matvec", expected: n, got: x.rows() });
    }
    let r = m.rank();
    let b = x.cols();
    // t(k, i, j) = hᵢᵀ Bᵏ xⱼ through a running power of B applied to X.
    let mut t = vec![0.0; n * r * b];
    let mut w = x.clone();
    for k in 0..n {
        for i in 0..r {
            let h_i = m.h.col(i);
            for j in 0..b {
                let wj = w.col(j);
                let mut dot = 0.0;
                for p in 0..n {
                    dot += h_i[p] * wj[p];
                }
                t[(k * r + i) * b + j] = dot;
            }
        }
        if k + 1 < n {
            for j in 0..b {
                let col = m.op_b.apply(w.col(j))?;
                w.col_mut(j).copy_from_slice(&col);
            }
        }
    }
    // Y = Σ_k Aᵏ·(G·t(k)) accumulated highest power first.
    let mut y = DenseMatrix::zeros(n, b);
    for k in (0..n).rev() {
        for j in 0..b {
            let col = m.op_a.apply(y.col(j))?;
            y.col_mut(j).copy_from_slice(&col);
        }
        for i in 0..r {
            let g_i = m.g.col(i);
            for j in 0..b {
                let c = t[(k * r + i) * b + j];
                if c != 0.0 {
                    let col = y.col_mut(j);
                    for p in 0..n {
                        col[p] += g_i[p] * c;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Multiplies the represented matrix by a batch: `Y = M·X` for an `LdrMatrix`
/// with subdiagonal operators.
///
/// Zero corners and a power-of-two size take the fast composed path — one
/// transpose kernel with `B`, one multiply kernel with `A`. A nonzero corner
/// is outside the fast recursion and falls back to the `O(n²r)` path with a
/// warning on stderr; non-power-of-two sizes fall back silently.
pub fn ldr_sd_matvec(m: &LdrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    let (corner_a, corner_b) = match (&m.op_a, &m.op_b) {
        (
            Operator::Subdiagonal { corner: ca, .. },
            Operator::Subdiagonal { corner: cb, .. },
        ) => (*ca, *cb),
        _ => {
            return Err(Error::Config {
                message: "ldr_sd_matvec needs subdiagonal operators on both sides".into(),
            })
        }
    };
    let n = m.n();
    if x.rows() != n {
        return Err(Error::DimMismatch { context: "ldr_sd_matvec", expected: n, got: x.rows() });
    }
    if corner_a != 0.0 || corner_b != 0.0 {
        eprintln!(
            "ldr_sd_matvec: nonzero operator corner, using the O(n^2 r) Krylov path"
        );
        return ldr_matvec_slow(m, x);
    }
    if !is_power_of_two(n) {
        return ldr_matvec_slow(m, x);
    }
    // tt(j, i, k) = hᵢᵀ Bᵏ xⱼ; transposed into the coefficient layout the
    // multiply kernel expects.
    let tt = krylov_transpose_multiply(&m.op_b, x, &m.h)?;
    let r = m.rank();
    let b = x.cols();
    let mut coeffs = CoeffTensor::zeros(r, b, n);
    for i in 0..r {
        for j in 0..b {
            let src = tt.slice(j, i);
            coeffs.slice_mut(i, j).copy_from_slice(src);
        }
    }
    krylov_multiply(&m.op_a, &m.g, &coeffs)
}

/// Multiply for the tridiagonal-operator representation: the Krylov matrices
/// are applied through their defining recurrences in `O(n²r)` per column.
pub fn ldr_td_matvec(m: &LdrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    match (&m.op_a, &m.op_b) {
        (Operator::Tridiagonal { .. }, Operator::Tridiagonal { .. }) => ldr_matvec_slow(m, x),
        _ => Err(Error::Config {
            message: "ldr_td_matvec needs tridiagonal operators on both sides".into(),
        }),
    }
}

/// Linear convolution of two length-`n` sequences through one batched
/// size-`2n` FFT round; returns `2n` coefficients (the last is zero up to
/// rounding).
fn linear_convolution(a: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    let size = 2 * n;
    let mut re = vec![0.0; 2 * size];
    let mut im = vec![0.0; 2 * size];
    re[..n].copy_from_slice(a);
    re[size..size + n].copy_from_slice(c);
    batched_fft(&mut re, &mut im, size, false)?;
    let (a_re, c_re) = re.split_at_mut(size);
    let (a_im, c_im) = im.split_at_mut(size);
    for t in 0..size {
        let pr = a_re[t] * c_re[t] - a_im[t] * c_im[t];
        let pi = a_re[t] * c_im[t] + a_im[t] * c_re[t];
        a_re[t] = pr;
        a_im[t] = pi;
    }
    batched_fft(&mut re[..size], &mut im[..size], size, true)?;
    re.truncate(size);
    Ok(re)
}

/// `y = K(Z_f, v)·x`: multiplication by the f-circulant whose first column is
/// `v`, in `O(n log n)` via a doubled-length linear convolution folded with
/// weight `f`.
pub fn circulant_matvec(f: f64, v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    check_fast_size(n)?;
    if x.len() != n {
        return Err(Error::DimMismatch { context: "circulant_matvec", expected: n, got: x.len() });
    }
    if n == 1 {
        return Ok(vec![v[0] * x[0]]);
    }
    let c = linear_convolution(v, x)?;
    Ok((0..n).map(|k| c[k] + f * c[k + n]).collect())
}

/// Krylov-slot operators whose representation family is exactly the classic
/// Toeplitz displacement class. The first slot holds `Z_1ᵀ = Z_1⁻¹`, so the
/// represented matrices are those of displacement rank ≤ 2r with respect to
/// `(Z_1, Z_{−1})` — the pair that annihilates true Toeplitz structure.
pub fn toeplitz_like_operators(n: usize) -> (Operator, Operator) {
    (Operator::unit_superdiagonal(n, 1.0), Operator::shift(n, -1.0))
}

/// Matvec for the Toeplitz-class representation with generators `G, H`:
/// `y = Σᵢ K(Z_1ᵀ, gᵢ)·K(Z_{−1}ᵀ, hᵢ)ᵀ·x`, evaluated as `2r` circulant-type
/// passes in `O(n·r·log n)`.
pub fn toeplitz_like_matvec(g: &DenseMatrix, h: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let n = g.rows();
    check_fast_size(n)?;
    if h.rows() != n || x.len() != n {
        return Err(Error::DimMismatch {
            context: "toeplitz_like_matvec",
            expected: n,
            got: if h.rows() != n { h.rows() } else { x.len() },
        });
    }
    if g.cols() != h.cols() {
        return Err(Error::DimMismatch {
            context: "toeplitz_like_matvec generators",
            expected: g.cols(),
            got: h.cols(),
        });
    }
    let r = g.cols();
    if n == 1 {
        let mut y = 0.0;
        for i in 0..r {
            y += g.get(0, i) * h.get(0, i) * x[0];
        }
        return Ok(vec![y]);
    }
    // First stage per generator column: w(k) = hᵢᵀ Z_{−1}ᵏ x, a (−1)-cyclic
    // correlation, taken from one linear convolution against reversed x.
    let x_rev: Vec<f64> = x.iter().rev().copied().collect();
    let mut acc_re = vec![0.0; n];
    let mut acc_im = vec![0.0; n];
    let mut buf_re = vec![0.0; 2 * n];
    let mut buf_im = vec![0.0; 2 * n];
    for i in 0..r {
        let e = linear_convolution(h.col(i), &x_rev)?;
        let mut w = vec![0.0; n];
        for k in 0..n {
            let wrapped = if k == 0 { 0.0 } else { e[k - 1] };
            w[k] = e[n - 1 + k] - wrapped;
        }
        // Second stage: y += K(Z_1ᵀ, gᵢ)·w, a cyclic correlation of gᵢ with w,
        // accumulated in the frequency domain across generator columns.
        buf_re[..n].copy_from_slice(g.col(i));
        buf_re[n..].copy_from_slice(&w);
        buf_im.fill(0.0);
        batched_fft(&mut buf_re, &mut buf_im, n, false)?;
        for t in 0..n {
            let gr = buf_re[t];
            let gi = buf_im[t];
            let wr = buf_re[n + t];
            let wi = -buf_im[n + t];
            acc_re[t] += gr * wr - gi * wi;
            acc_im[t] += gr * wi + gi * wr;
        }
    }
    batched_fft(&mut acc_re, &mut acc_im, n, true)?;
    Ok(acc_re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::displacement::{displacement, krylov};
    use crate::linalg::dense_matvec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_subdiagonal(rng: &mut ChaCha8Rng, n: usize) -> Operator {
        Operator::Subdiagonal {
            sub: (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            corner: 0.0,
        }
    }

    fn kt_oracle(op: &Operator, v: &DenseMatrix, u: &DenseMatrix) -> CoeffTensor {
        let n = op.n();
        let mut out = CoeffTensor::zeros(v.cols(), u.cols(), n);
        for i in 0..v.cols() {
            let k = krylov(op, v.col(i)).unwrap();
            for j in 0..u.cols() {
                for t in 0..n {
                    let mut dot = 0.0;
                    for p in 0..n {
                        dot += k.get(p, t) * u.get(p, j);
                    }
                    out.set(i, j, t, dot);
                }
            }
        }
        out
    }

    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in got.iter().zip(want) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn transpose_kernel_with_zero_subdiagonal_keeps_only_dots() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 8;
        let op = Operator::Subdiagonal { sub: vec![0.0; n - 1], corner: 0.0 };
        let v = random_matrix(&mut rng, n, 2);
        let u = random_matrix(&mut rng, n, 3);
        let t = krylov_transpose_multiply(&op, &v, &u).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut dot = 0.0;
                for p in 0..n {
                    dot += v.get(p, i) * u.get(p, j);
                }
                assert_relative_eq!(t.get(i, j, 0), dot, epsilon = 1e-12);
                for k in 1..n {
                    assert_relative_eq!(t.get(i, j, k), 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn transpose_kernel_with_downshift_and_unit_vector_returns_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let n = 16;
        let op = Operator::shift(n, 0.0);
        let mut v = DenseMatrix::zeros(n, 1);
        v.set(0, 0, 1.0);
        let u = random_matrix(&mut rng, n, 2);
        let t = krylov_transpose_multiply(&op, &v, &u).unwrap();
        for j in 0..2 {
            assert!(rel_err(t.slice(0, j), u.col(j)) < 1e-12);
        }
    }

    #[test]
    fn transpose_kernel_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for n in [4usize, 8, 16, 32] {
            for &(r, b) in &[(1usize, 1usize), (2, 3), (4, 2)] {
                let op = random_subdiagonal(&mut rng, n);
                let v = random_matrix(&mut rng, n, r);
                let u = random_matrix(&mut rng, n, b);
                let fast = krylov_transpose_multiply(&op, &v, &u).unwrap();
                let want = kt_oracle(&op, &v, &u);
                let e = rel_err(fast.as_slice(), want.as_slice());
                assert!(e < 1e-9, "n={n} r={r} b={b} err={e}");
            }
        }
    }

    #[test]
    fn transpose_kernel_rejects_bad_inputs() {
        let op = Operator::Subdiagonal { sub: vec![1.0, 1.0], corner: 0.0 };
        let v = DenseMatrix::zeros(3, 1);
        assert!(matches!(
            krylov_transpose_multiply(&op, &v, &v),
            Err(Error::InvalidLength { len: 3 })
        ));
        let op = Operator::Subdiagonal { sub: vec![1.0; 3], corner: 0.5 };
        let v = DenseMatrix::zeros(4, 1);
        assert!(krylov_transpose_multiply(&op, &v, &v).is_err());
        let op = Operator::Diagonal { d: vec![1.0; 4] };
        assert!(krylov_transpose_multiply(&op, &v, &v).is_err());
    }

    #[test]
    fn multiply_kernel_with_zero_subdiagonal_scales_first_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let n = 8;
        let op = Operator::Subdiagonal { sub: vec![0.0; n - 1], corner: 0.0 };
        let v = random_matrix(&mut rng, n, 1);
        let mut coeffs = CoeffTensor::zeros(1, 1, n);
        for k in 0..n {
            coeffs.set(0, 0, k, rng.gen_range(-1.0..1.0));
        }
        let y = krylov_multiply(&op, &v, &coeffs).unwrap();
        // K(A, v) = [v 0 … 0] so only c₀ survives.
        for p in 0..n {
            assert_relative_eq!(y.get(p, 0), coeffs.get(0, 0, 0) * v.get(p, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn multiply_kernel_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for n in [4usize, 8, 16, 32] {
            for &(r, b) in &[(1usize, 1usize), (2, 3), (3, 2)] {
                let op = random_subdiagonal(&mut rng, n);
                let v = random_matrix(&mut rng, n, r);
                let mut coeffs = CoeffTensor::zeros(r, b, n);
                for i in 0..r {
                    for j in 0..b {
                        for k in 0..n {
                            coeffs.set(i, j, k, rng.gen_range(-1.0..1.0));
                        }
                    }
                }
                let fast = krylov_multiply(&op, &v, &coeffs).unwrap();
                let mut want = DenseMatrix::zeros(n, b);
                for i in 0..r {
                    let km = krylov(&op, v.col(i)).unwrap();
                    for j in 0..b {
                        let prod = dense_matvec(&km, coeffs.slice(i, j)).unwrap();
                        for p in 0..n {
                            want.set(p, j, want.get(p, j) + prod[p]);
                        }
                    }
                }
                let e = rel_err(fast.as_slice(), want.as_slice());
                assert!(e < 1e-9, "n={n} r={r} b={b} err={e}");
            }
        }
    }

    #[test]
    fn kernels_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for n in [8usize, 32] {
            let r = 2;
            let b = 2;
            let op = random_subdiagonal(&mut rng, n);
            let v = random_matrix(&mut rng, n, r);
            let u = random_matrix(&mut rng, n, b);
            let mut c = CoeffTensor::zeros(r, b, n);
            for i in 0..r {
                for j in 0..b {
                    for k in 0..n {
                        c.set(i, j, k, rng.gen_range(-1.0..1.0));
                    }
                }
            }
            let t = krylov_transpose_multiply(&op, &v, &u).unwrap();
            let y = krylov_multiply(&op, &v, &c).unwrap();
            let lhs: f64 = t.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum();
            let mut rhs = 0.0;
            for j in 0..b {
                for p in 0..n {
                    rhs += u.get(p, j) * y.get(p, j);
                }
            }
            assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
        }
    }

    #[test]
    fn fft_trace_counts_rounds_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 64;
        let op = random_subdiagonal(&mut rng, n);
        let v = random_matrix(&mut rng, n, 1);
        let u = random_matrix(&mut rng, n, 1);
        start_fft_trace();
        krylov_transpose_multiply(&op, &v, &u).unwrap();
        let trace = take_fft_trace();
        let forward: Vec<&FftCall> = trace.iter().filter(|c| !c.inverse).collect();
        assert_eq!(forward.len(), 6); // log2(64) merge depths
        for (d, call) in forward.iter().enumerate() {
            assert_eq!(call.depth, d);
            assert_eq!(call.size, 2 << d);
            assert_eq!(call.items, n >> d); // (b + r)·n / 2^{d+1} with b = r = 1
        }
        let inverse: Vec<&FftCall> = trace.iter().filter(|c| c.inverse).collect();
        assert_eq!(inverse.len(), 6);
        for call in inverse {
            assert_eq!(call.items, 1); // r·b
        }
        // Trace is off once taken.
        krylov_transpose_multiply(&op, &v, &u).unwrap();
        assert!(take_fft_trace().is_empty());
    }

    #[test]
    fn slow_path_matches_reconstruct_for_any_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let n = 12; // deliberately not a power of two
        let op_a = Operator::Tridiagonal {
            sub: (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            diag: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            sup: (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            corner_tr: rng.gen_range(-1.0..1.0),
            corner_bl: rng.gen_range(-1.0..1.0),
        };
        let op_b = Operator::Subdiagonal {
            sub: (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            corner: rng.gen_range(-1.0..1.0),
        };
        let m = LdrMatrix::new(
            op_a,
            op_b,
            random_matrix(&mut rng, n, 2),
            random_matrix(&mut rng, n, 2),
        )
        .unwrap();
        let x = random_matrix(&mut rng, n, 3);
        let got = ldr_matvec_slow(&m, &x).unwrap();
        let want = m.reconstruct().unwrap().matmul(&x).unwrap();
        assert!(rel_err(got.as_slice(), want.as_slice()) < 1e-10);
    }

    #[test]
    fn sd_matvec_fast_path_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        for n in [4usize, 16, 64] {
            for &(r, b) in &[(1usize, 1usize), (4, 5)] {
                let m = LdrMatrix::new(
                    random_subdiagonal(&mut rng, n),
                    random_subdiagonal(&mut rng, n),
                    random_matrix(&mut rng, n, r),
                    random_matrix(&mut rng, n, r),
                )
                .unwrap();
                let x = random_matrix(&mut rng, n, b);
                let got = ldr_sd_matvec(&m, &x).unwrap();
                let want = m.reconstruct().unwrap().matmul(&x).unwrap();
                let e = rel_err(got.as_slice(), want.as_slice());
                assert!(e < 1e-8, "n={n} r={r} b={b} err={e}");
            }
        }
    }

    #[test]
    fn sd_matvec_zero_generators_give_zero() {
        let n = 8;
        let m = LdrMatrix::new(
            Operator::unit_subdiagonal(n, 0.0),
            Operator::unit_subdiagonal(n, 0.0),
            DenseMatrix::zeros(n, 2),
            DenseMatrix::zeros(n, 2),
        )
        .unwrap();
        let x = DenseMatrix::from_fn(n, 2, |i, j| (i + j) as f64);
        assert_eq!(ldr_sd_matvec(&m, &x).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn sd_matvec_is_linear_in_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 32;
        let m = LdrMatrix::new(
            random_subdiagonal(&mut rng, n),
            random_subdiagonal(&mut rng, n),
            random_matrix(&mut rng, n, 2),
            random_matrix(&mut rng, n, 2),
        )
        .unwrap();
        let x = random_matrix(&mut rng, n, 1);
        let y = random_matrix(&mut rng, n, 1);
        let combo = x.scale(1.75).add(&y.scale(-0.4)).unwrap();
        let lhs = ldr_sd_matvec(&m, &combo).unwrap();
        let rhs = ldr_sd_matvec(&m, &x)
            .unwrap()
            .scale(1.75)
            .add(&ldr_sd_matvec(&m, &y).unwrap().scale(-0.4))
            .unwrap();
        assert!(rel_err(lhs.as_slice(), rhs.as_slice()) < 1e-10);
    }

    #[test]
    fn sd_matvec_corner_falls_back_to_slow_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 16;
        let m = LdrMatrix::new(
            Operator::Subdiagonal {
                sub: (0..n - 1).map(|_| rng.gen_range(0.5..1.5)).collect(),
                corner: 0.8,
            },
            Operator::unit_subdiagonal(n, -1.0),
            random_matrix(&mut rng, n, 2),
            random_matrix(&mut rng, n, 2),
        )
        .unwrap();
        let x = random_matrix(&mut rng, n, 1);
        let got = ldr_sd_matvec(&m, &x).unwrap();
        let want = m.reconstruct().unwrap().matmul(&x).unwrap();
        assert!(rel_err(got.as_slice(), want.as_slice()) < 1e-9);
    }

    #[test]
    fn sd_matvec_rejects_wrong_variant() {
        let n = 8;
        let m = LdrMatrix::new(
            Operator::shift(n, 0.0),
            Operator::unit_subdiagonal(n, 0.0),
            DenseMatrix::zeros(n, 1),
            DenseMatrix::zeros(n, 1),
        )
        .unwrap();
        assert!(matches!(
            ldr_sd_matvec(&m, &DenseMatrix::zeros(n, 1)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn td_matvec_matches_oracle_and_contains_subdiagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 32;
        let sub_a: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sub_b: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = random_matrix(&mut rng, n, 2);
        let h = random_matrix(&mut rng, n, 2);
        let x = random_matrix(&mut rng, n, 2);
        // Tridiagonal operators restricted to the subdiagonal band must agree
        // with the subdiagonal fast path.
        let as_tridiag = |sub: &[f64]| Operator::Tridiagonal {
            sub: sub.to_vec(),
            diag: vec![0.0; n],
            sup: vec![0.0; n - 1],
            corner_tr: 0.0,
            corner_bl: 0.0,
        };
        let td = LdrMatrix::new(as_tridiag(&sub_a), as_tridiag(&sub_b), g.clone(), h.clone())
            .unwrap();
        let sd = LdrMatrix::new(
            Operator::Subdiagonal { sub: sub_a, corner: 0.0 },
            Operator::Subdiagonal { sub: sub_b, corner: 0.0 },
            g,
            h,
        )
        .unwrap();
        let td_y = ldr_td_matvec(&td, &x).unwrap();
        let sd_y = ldr_sd_matvec(&sd, &x).unwrap();
        assert!(rel_err(td_y.as_slice(), sd_y.as_slice()) < 1e-10);
        let want = td.reconstruct().unwrap().matmul(&x).unwrap();
        assert!(rel_err(td_y.as_slice(), want.as_slice()) < 1e-10);
        assert!(ldr_td_matvec(&sd, &x).is_err());
    }

    #[test]
    fn circulant_identity_and_shift_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut e0 = [0.0; 4];
        e0[0] = 1.0;
        for f in [0.0, 1.0, -1.0, 0.6] {
            assert_eq!(circulant_matvec(f, &e0, &x).unwrap(), x.to_vec());
        }
        let mut e1 = [0.0; 4];
        e1[1] = 1.0;
        let y = circulant_matvec(1.0, &e1, &x).unwrap();
        for (a, b) in y.iter().zip([4.0, 1.0, 2.0, 3.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn circulant_matches_dense_krylov_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for n in [4usize, 16] {
            for f in [1.0, -1.0, 0.3] {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let got = circulant_matvec(f, &v, &x).unwrap();
                let k = krylov(&Operator::shift(n, f), &v).unwrap();
                let want = dense_matvec(&k, &x).unwrap();
                assert!(rel_err(&got, &want) < 1e-10, "n={n} f={f}");
            }
        }
    }

    #[test]
    fn toeplitz_like_matches_reconstruct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for n in [8usize, 32] {
            for r in [1usize, 4] {
                let g = random_matrix(&mut rng, n, r);
                let h = random_matrix(&mut rng, n, r);
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let got = toeplitz_like_matvec(&g, &h, &x).unwrap();
                let (op_a, op_b) = toeplitz_like_operators(n);
                let m = LdrMatrix::new(op_a, op_b, g, h).unwrap();
                let want = dense_matvec(&m.reconstruct().unwrap(), &x).unwrap();
                assert!(rel_err(&got, &want) < 1e-9, "n={n} r={r}");
            }
        }
    }

    #[test]
    fn toeplitz_like_zero_generators_give_zero() {
        let g = DenseMatrix::zeros(8, 1);
        let y = toeplitz_like_matvec(&g, &g, &[1.0; 8]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn true_toeplitz_generators_reproduce_the_toeplitz_multiply() {
        // Take a dense Toeplitz matrix, read its displacement certificate
        // w.r.t. (Z_1, Z_{−1}), and convert to representation generators by
        // g′ = ½·Z_1ᵀ·g. The matvec must then equal the dense multiply.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let n = 16;
        let diags: Vec<f64> = (0..2 * n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = DenseMatrix::from_fn(n, n, |i, j| diags[i + n - 1 - j]);
        let resid = displacement(&t, &Operator::shift(n, 1.0), &Operator::shift(n, -1.0)).unwrap();
        // The residual lives on the first row and last column; split it into
        // two rank-one terms.
        let mut g_cert = DenseMatrix::zeros(n, 2);
        let mut h_cert = DenseMatrix::zeros(n, 2);
        g_cert.set(0, 0, 1.0);
        for j in 0..n {
            h_cert.set(j, 0, resid.get(0, j));
        }
        for i in 1..n {
            g_cert.set(i, 1, resid.get(i, n - 1));
        }
        h_cert.set(n - 1, 1, 1.0);
        let z1 = Operator::shift(n, 1.0);
        let mut g_rep = DenseMatrix::zeros(n, 2);
        for i in 0..2 {
            let col = z1.apply_transpose(g_cert.col(i)).unwrap();
            for p in 0..n {
                g_rep.set(p, i, 0.5 * col[p]);
            }
        }
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = toeplitz_like_matvec(&g_rep, &h_cert, &x).unwrap();
        let want = dense_matvec(&t, &x).unwrap();
        assert!(rel_err(&got, &want) < 1e-10);
    }
}
