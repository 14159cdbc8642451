//! C ABI over the structured-matrix core: opaque handles, flat column-major
//! buffers, and integer status codes.
//!
//! The build script regenerates `include/ldr.h` from this file. Handles come
//! from [`ldr_subdiagonal_new`] or [`ldr_deserialize`] and must be released
//! with [`ldr_free`]; every other function borrows them. Output buffers are
//! caller-allocated, and [`ldr_serialize`] reports its size requirement when
//! handed a null buffer, so a two-call pattern needs no guessing.
//!
//! Thread safety: handles are immutable after construction, so sharing a
//! handle across threads for reads is fine; create and free are not
//! synchronized against concurrent use of the same handle.

use std::os::raw::c_char;

use ldr_core::displacement::{LdrMatrix, Operator};
use ldr_core::fastmult::ldr_sd_matvec;
use ldr_core::linalg::DenseMatrix;
use ldr_core::Error;

/// Result of every fallible call in this ABI. Zero is success; everything
/// else names the first problem encountered.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdrStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A dimension, length, or value argument was rejected.
    InvalidArgument = 2,
    /// The computation hit a numeric failure (non-finite input, no
    /// convergence, singular or overlapping spectra).
    NumericError = 3,
    /// Serialized bytes were malformed.
    ParseError = 4,
    /// The caller-provided buffer is too small; retry with the reported size.
    BufferTooSmall = 5,
}

/// Opaque structured matrix. The layout is private to the library; C code
/// only ever holds pointers handed out by the constructors.
pub struct LdrHandle {
    inner: LdrMatrix,
}

fn status_of(err: &Error) -> LdrStatus {
    match err {
        Error::Parse { .. } => LdrStatus::ParseError,
        Error::InvalidLength { .. } | Error::DimMismatch { .. } | Error::Config { .. } => {
            LdrStatus::InvalidArgument
        }
        _ => LdrStatus::NumericError,
    }
}

fn into_handle(m: LdrMatrix) -> *mut LdrHandle {
    Box::into_raw(Box::new(LdrHandle { inner: m }))
}

/// # Safety
/// `h` must be null or a live pointer from this library's constructors.
unsafe fn borrow<'a>(h: *const LdrHandle) -> Option<&'a LdrMatrix> {
    h.as_ref().map(|w| &w.inner)
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Create a structured matrix with subdiagonal displacement operators.
///
/// `sub_a` and `sub_b` hold the `n - 1` subdiagonal entries of the two
/// operators, `corner_a`/`corner_b` their top-right corner values, and
/// `g`/`h` the `n x rank` generator blocks in column-major order. The matrix
/// they define is the Krylov-product sum over the generator columns. On
/// success `*out` owns the new handle.
///
/// # Safety
/// `sub_a` and `sub_b` must be valid for `n - 1` reads, `g` and `h` for
/// `n * rank` reads, and `out` for one write. `n >= 1` and `rank >= 1` are
/// required; violations are reported, not undefined behavior, as long as the
/// pointers match the lengths implied by `n` and `rank`.
#[no_mangle]
pub unsafe extern "C" fn ldr_subdiagonal_new(
    n: u64,
    rank: u64,
    sub_a: *const f64,
    corner_a: f64,
    sub_b: *const f64,
    corner_b: f64,
    g: *const f64,
    h: *const f64,
    out: *mut *mut LdrHandle,
) -> LdrStatus {
    if out.is_null() {
        return LdrStatus::NullArgument;
    }
    *out = std::ptr::null_mut();
    let (n, rank) = (n as usize, rank as usize);
    if n == 0 || rank == 0 {
        return LdrStatus::InvalidArgument;
    }
    let (Some(sub_a), Some(sub_b)) = (slice_arg(sub_a, n - 1), slice_arg(sub_b, n - 1)) else {
        return LdrStatus::NullArgument;
    };
    let (Some(g), Some(h)) = (slice_arg(g, n * rank), slice_arg(h, n * rank)) else {
        return LdrStatus::NullArgument;
    };
    let op_a = Operator::Subdiagonal { sub: sub_a.to_vec(), corner: corner_a };
    let op_b = Operator::Subdiagonal { sub: sub_b.to_vec(), corner: corner_b };
    let g = match DenseMatrix::from_column_major(n, rank, g.to_vec()) {
        Ok(m) => m,
        Err(e) => return status_of(&e),
    };
    let h = match DenseMatrix::from_column_major(n, rank, h.to_vec()) {
        Ok(m) => m,
        Err(e) => return status_of(&e),
    };
    match LdrMatrix::new(op_a, op_b, g, h) {
        Ok(m) => {
            *out = into_handle(m);
            LdrStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Release a handle. Null is ignored; anything else must have come from this
/// library and must not be used afterwards.
///
/// # Safety
/// `h` must be null or an unfreed pointer returned by a constructor here.
#[no_mangle]
pub unsafe extern "C" fn ldr_free(h: *mut LdrHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Side length of the (square) matrix behind `h`, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldr_dim(h: *const LdrHandle) -> u64 {
    borrow(h).map_or(0, |m| m.n() as u64)
}

/// Generator width (number of Krylov-product terms), or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldr_rank(h: *const LdrHandle) -> u64 {
    borrow(h).map_or(0, |m| m.rank() as u64)
}

/// Multiply: `y = M x`. Both buffers have length `n`; `x_len` and `y_len`
/// are checked against the handle's dimension before anything is touched.
///
/// # Safety
/// `x` must be valid for `x_len` reads and `y` for `y_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ldr_matvec(
    h: *const LdrHandle,
    x: *const f64,
    x_len: u64,
    y: *mut f64,
    y_len: u64,
) -> LdrStatus {
    let Some(m) = borrow(h) else {
        return LdrStatus::NullArgument;
    };
    if x.is_null() || y.is_null() {
        return LdrStatus::NullArgument;
    }
    let n = m.n();
    if x_len as usize != n || (y_len as usize) != n {
        return LdrStatus::InvalidArgument;
    }
    let x = std::slice::from_raw_parts(x, n);
    let xm = match DenseMatrix::from_column_major(n, 1, x.to_vec()) {
        Ok(v) => v,
        Err(e) => return status_of(&e),
    };
    match ldr_sd_matvec(m, &xm) {
        Ok(ym) => {
            std::slice::from_raw_parts_mut(y, n).copy_from_slice(ym.as_slice());
            LdrStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Write the dense `n x n` matrix in column-major order into `out`.
/// `out_len` must be exactly `n * n`.
///
/// # Safety
/// `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ldr_reconstruct(
    h: *const LdrHandle,
    out: *mut f64,
    out_len: u64,
) -> LdrStatus {
    let Some(m) = borrow(h) else {
        return LdrStatus::NullArgument;
    };
    if out.is_null() {
        return LdrStatus::NullArgument;
    }
    let n = m.n();
    if out_len as usize != n * n {
        return LdrStatus::InvalidArgument;
    }
    match m.reconstruct() {
        Ok(dense) => {
            std::slice::from_raw_parts_mut(out, n * n).copy_from_slice(dense.as_slice());
            LdrStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Serialize the handle into `buf`. With a null `buf`, no bytes are written
/// and `*written` reports the required size; otherwise up to `cap` bytes are
/// written and `*written` reports the actual count. A too-small non-null
/// buffer leaves the buffer untouched and returns `BufferTooSmall` with the
/// required size in `*written`.
///
/// # Safety
/// `written` must be valid for one write and `buf` null or valid for `cap`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn ldr_serialize(
    h: *const LdrHandle,
    buf: *mut u8,
    cap: u64,
    written: *mut u64,
) -> LdrStatus {
    let Some(m) = borrow(h) else {
        return LdrStatus::NullArgument;
    };
    if written.is_null() {
        return LdrStatus::NullArgument;
    }
    let bytes = m.to_bytes();
    *written = bytes.len() as u64;
    if buf.is_null() {
        return LdrStatus::Ok;
    }
    if (cap as usize) < bytes.len() {
        return LdrStatus::BufferTooSmall;
    }
    std::slice::from_raw_parts_mut(buf, bytes.len()).copy_from_slice(&bytes);
    LdrStatus::Ok
}

/// Rebuild a handle from bytes produced by [`ldr_serialize`]. On success
/// `*out` owns the new handle; on failure it is null.
///
/// # Safety
/// `bytes` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn ldr_deserialize(
    bytes: *const u8,
    len: u64,
    out: *mut *mut LdrHandle,
) -> LdrStatus {
    if out.is_null() {
        return LdrStatus::NullArgument;
    }
    *out = std::ptr::null_mut();
    if bytes.is_null() {
        return LdrStatus::NullArgument;
    }
    let data = std::slice::from_raw_parts(bytes, len as usize);
    match LdrMatrix::from_bytes(data) {
        Ok(m) => {
            *out = into_handle(m);
            LdrStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Stable, NUL-terminated name of a status code, for error messages on the
/// C side. Never null; unknown values (possible across version skew) map to
/// `"unknown"`. The returned pointer is static and must not be freed.
#[no_mangle]
pub extern "C" fn ldr_status_name(status: LdrStatus) -> *const c_char {
    let name: &'static [u8] = match status {
        LdrStatus::Ok => b"ok\0",
        LdrStatus::NullArgument => b"null argument\0",
        LdrStatus::InvalidArgument => b"invalid argument\0",
        LdrStatus::NumericError => b"numeric error\0",
        LdrStatus::ParseError => b"parse error\0",
        LdrStatus::BufferTooSmall => b"buffer too small\0",
    };
    name.as_ptr() as *const c_char
}
