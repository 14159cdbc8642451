/* C interface to the structured low-displacement-rank matrix library. */

#ifndef LDR_H
#define LDR_H

/* Generated by cbindgen from crates/capi; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this ABI. Zero is success; everything
 * else names the first problem encountered.
 */
typedef enum LdrStatus {
  /**
   * The call succeeded.
   */
  LDR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LDR_STATUS_NULL_ARGUMENT = 1,
  /**
   * A dimension, length, or value argument was rejected.
   */
  LDR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The computation hit a numeric failure (non-finite input, no
   * convergence, singular or overlapping spectra).
   */
  LDR_STATUS_NUMERIC_ERROR = 3,
  /**
   * Serialized bytes were malformed.
   */
  LDR_STATUS_PARSE_ERROR = 4,
  /**
   * The caller-provided buffer is too small; retry with the reported size.
   */
  LDR_STATUS_BUFFER_TOO_SMALL = 5,
} LdrStatus;

/**
 * Opaque structured matrix. The layout is private to the library; C code
 * only ever holds pointers handed out by the constructors.
 */
typedef struct LdrHandle LdrHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a structured matrix with subdiagonal displacement operators.
 *
 * `sub_a` and `sub_b` hold the `n - 1` subdiagonal entries of the two
 * operators, `corner_a`/`corner_b` their top-right corner values, and
 * `g`/`h` the `n x rank` generator blocks in column-major order. The matrix
 * they define is the Krylov-product sum over the generator columns. On
 * success `*out` owns the new handle.
 *
 * # Safety
 * `sub_a` and `sub_b` must be valid for `n - 1` reads, `g` and `h` for
 * `n * rank` reads, and `out` for one write. `n >= 1` and `rank >= 1` are
 * required; violations are reported, not undefined behavior, as long as the
 * pointers match the lengths implied by `n` and `rank`.
 */
enum LdrStatus ldr_subdiagonal_new(uint64_t n,
                                   uint64_t rank,
                                   const double *sub_a,
                                   double corner_a,
                                   const double *sub_b,
                                   double corner_b,
                                   const double *g,
                                   const double *h,
                                   struct LdrHandle **out);

/**
 * Release a handle. Null is ignored; anything else must have come from this
 * library and must not be used afterwards.
 *
 * # Safety
 * `h` must be null or an unfreed pointer returned by a constructor here.
 */
void ldr_free(struct LdrHandle *h);

/**
 * Side length of the (square) matrix behind `h`, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
uint64_t ldr_dim(const struct LdrHandle *h);

/**
 * Generator width (number of Krylov-product terms), or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
uint64_t ldr_rank(const struct LdrHandle *h);

/**
 * Multiply: `y = M x`. Both buffers have length `n`; `x_len` and `y_len`
 * are checked against the handle's dimension before anything is touched.
 *
 * # Safety
 * `x` must be valid for `x_len` reads and `y` for `y_len` writes.
 */
enum LdrStatus ldr_matvec(const struct LdrHandle *h,
                          const double *x,
                          uint64_t x_len,
                          double *y,
                          uint64_t y_len);

/**
 * Write the dense `n x n` matrix in column-major order into `out`.
 * `out_len` must be exactly `n * n`.
 *
 * # Safety
 * `out` must be valid for `out_len` writes.
 */
enum LdrStatus ldr_reconstruct(const struct LdrHandle *h, double *out, uint64_t out_len);

/**
 * Serialize the handle into `buf`. With a null `buf`, no bytes are written
 * and `*written` reports the required size; otherwise up to `cap` bytes are
 * written and `*written` reports the actual count. A too-small non-null
 * buffer leaves the buffer untouched and returns `BufferTooSmall` with the
 * required size in `*written`.
 *
 * # Safety
 * `written` must be valid for one write and `buf` null or valid for `cap`
 * writes.
 */
enum LdrStatus ldr_serialize(const struct LdrHandle *h,
                             uint8_t *buf,
                             uint64_t cap,
                             uint64_t *written);

/**
 * Rebuild a handle from bytes produced by [`ldr_serialize`]. On success
 * `*out` owns the new handle; on failure it is null.
 *
 * # Safety
 * `bytes` must be valid for `len` reads and `out` for one write.
 */
enum LdrStatus ldr_deserialize(const uint8_t *bytes, uint64_t len, struct LdrHandle **out);

/**
 * Stable, NUL-terminated name of a status code, for error messages on the
 * C side. Never null; unknown values (possible across version skew) map to
 * `"unknown"`. The returned pointer is static and must not be freed.
 */
const char *ldr_status_name(enum LdrStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDR_H */
