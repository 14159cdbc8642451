//! Structured linear algebra for matrices with low displacement rank.
//!
//! A matrix `M` is *structured* here when the displacement `A M - M B` has
//! low rank for a pair of sparse operators `(A, B)`. This crate stores such
//! matrices implicitly as a sum of Krylov-matrix products
//!
//! ```text
//!     M = sum_i  K(A, g_i) * K(B^T, h_i)^T,        K(A, v) = [v, Av, ..., A^(n-1)v]
//! ```
//!
//! parameterized by the operators and the generator columns `g_i`, `h_i`.
//! The subdiagonal operator family admits an `O(n log^2 n)` matrix-vector
//! product via batched FFTs over a recursive resolvent decomposition; all
//! operator families admit an `O(n^2 r)` recurrence path that doubles as the
//! correctness oracle. On top of that sit displacement-rank certificates for
//! the classic structured families (Toeplitz, Hankel, Vandermonde, Cauchy,
//! orthogonal-polynomial transforms), closure rules (transpose / inverse /
//! sum / product / block), and a small SGD training stack so the operators
//! and generators can be learned from data.
//!
//! The `cli` module exposes the same functionality as the `ldr` binary:
//! `check`, `bench`, `train`, `dump`.

pub mod classes;
pub mod cli;
pub mod displacement;
pub mod error;
pub mod fastmult;
pub mod learn;
pub mod linalg;

pub use error::{Error, Result};
