//! Displacement operators and the compressed matrix representation built on them.
//!
//! A displacement operator pair `(A, B)` turns a dense matrix `M` into the
//! residual `R = A·M − M·B`. When `R` has low rank, `M` is determined (up to
//! the kernel of the map) by `R`'s rank-`r` factorization together with the
//! operator pair — a compressed encoding with `O(nr)` parameters instead of
//! `n²`. [`LdrMatrix`] stores the Krylov-product form directly:
//!
//! ```text
//! M = Σ_{i=1..r} K(A, gᵢ) · K(Bᵀ, hᵢ)ᵀ        K(A, v) = [v, Av, A²v, …]
//! ```
//!
//! which keeps multiplication fast and differentiable even when the operators
//! themselves are being learned. [`reconstruct`](LdrMatrix::reconstruct) is the
//! dense oracle every fast path is tested against; [`sylvester_solve`] recovers
//! a matrix from its residual when the operator spectra are disjoint.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, LuFactors};

/// A sparse displacement operator.
///
/// All variants apply to a vector in `O(n)` time. The stored entries are the
/// only nonzeros of the densified matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    /// The `Z_f` matrix: ones on the subdiagonal, `f` in the top-right corner.
    /// `f = 0` is the pure down-shift.
    Shift { n: usize, f: f64 },
    /// Learnable subdiagonal entries plus a top-right corner.
    Subdiagonal { sub: Vec<f64>, corner: f64 },
    /// Learnable tridiagonal entries plus both off corners
    /// (`corner_tr` at `(0, n−1)`, `corner_bl` at `(n−1, 0)`).
    Tridiagonal {
        sub: Vec<f64>,
        diag: Vec<f64>,
        sup: Vec<f64>,
        corner_tr: f64,
        corner_bl: f64,
    },
    /// Diagonal matrix `diag(d)`.
    Diagonal { d: Vec<f64> },
}

impl Operator {
    /// Convenience constructor for `Z_f`.
    pub fn shift(n: usize, f: f64) -> Operator {
        Operator::Shift { n, f }
    }

    /// Subdiagonal operator with all ones and the given corner — the dense
    /// pattern of `Z_f` but with every entry independently learnable.
    pub fn unit_subdiagonal(n: usize, corner: f64) -> Operator {
        Operator::Subdiagonal { sub: vec![1.0; n.saturating_sub(1)], corner }
    }

    /// Superdiagonal-only operator: the transpose pattern of `Z_f`, i.e. ones
    /// on the superdiagonal and `f` in the bottom-left corner.
    pub fn unit_superdiagonal(n: usize, corner_bl: f64) -> Operator {
        Operator::Tridiagonal {
            sub: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            sup: vec![1.0; n.saturating_sub(1)],
            corner_tr: 0.0,
            corner_bl,
        }
    }

    /// Side length of the (square) operator.
    pub fn n(&self) -> usize {
        match self {
            Operator::Shift { n, .. } => *n,
            Operator::Subdiagonal { sub, .. } => sub.len() + 1,
            Operator::Tridiagonal { diag, .. } => diag.len(),
            Operator::Diagonal { d } => d.len(),
        }
    }

    /// Dense `n×n` matrix with the variant's entries placed and zeros elsewhere.
    pub fn densify(&self) -> DenseMatrix {
        let n = self.n();
        let mut m = DenseMatrix::zeros(n, n);
        match self {
            Operator::Shift { f, .. } => {
                for i in 1..n {
                    m.set(i, i - 1, 1.0);
                }
                if n > 0 {
                    m.set(0, n - 1, *f);
                }
            }
            Operator::Subdiagonal { sub, corner } => {
                for (i, &s) in sub.iter().enumerate() {
                    m.set(i + 1, i, s);
                }
                if n > 0 {
                    m.set(0, n - 1, corner + m.get(0, n - 1));
                }
            }
            Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
                for (i, &v) in diag.iter().enumerate() {
                    m.set(i, i, v);
                }
                for (i, &s) in sub.iter().enumerate() {
                    m.set(i + 1, i, s);
                }
                for (i, &s) in sup.iter().enumerate() {
                    m.set(i, i + 1, s);
                }
                if n > 1 {
                    m.set(0, n - 1, m.get(0, n - 1) + corner_tr);
                    m.set(n - 1, 0, m.get(n - 1, 0) + corner_bl);
                }
            }
            Operator::Diagonal { d } => {
                for (i, &v) in d.iter().enumerate() {
                    m.set(i, i, v);
                }
            }
        }
        m
    }

    /// `y = op · x` in `O(n)` time; equals `densify(op)·x` exactly.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimMismatch { context: "operator apply", expected: n, got: x.len() });
        }
        let mut y = vec![0.0; n];
        match self {
            Operator::Shift { f, .. } => {
                for i in 1..n {
                    y[i] = x[i - 1];
                }
                if n > 0 {
                    y[0] += f * x[n - 1];
                }
            }
            Operator::Subdiagonal { sub, corner } => {
                for (i, &s) in sub.iter().enumerate() {
                    y[i + 1] = s * x[i];
                }
                if n > 0 {
                    y[0] += corner * x[n - 1];
                }
            }
            Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
                for i in 0..n {
                    y[i] = diag[i] * x[i];
                }
                for (i, &s) in sub.iter().enumerate() {
                    y[i + 1] += s * x[i];
                }
                for (i, &s) in sup.iter().enumerate() {
                    y[i] += s * x[i + 1];
                }
                if n > 1 {
                    y[0] += corner_tr * x[n - 1];
                    y[n - 1] += corner_bl * x[0];
                }
            }
            Operator::Diagonal { d } => {
                for i in 0..n {
                    y[i] = d[i] * x[i];
                }
            }
        }
        Ok(y)
    }

    /// `y = opᵀ · x` in `O(n)` time.
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimMismatch {
                context: "operator apply_transpose",
                expected: n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        match self {
            Operator::Shift { f, .. } => {
                for i in 1..n {
                    y[i - 1] = x[i];
                }
                if n > 0 {
                    y[n - 1] += f * x[0];
                }
            }
            Operator::Subdiagonal { sub, corner } => {
                for (i, &s) in sub.iter().enumerate() {
                    y[i] = s * x[i + 1];
                }
                if n > 0 {
                    y[n - 1] += corner * x[0];
                }
            }
            Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
                for i in 0..n {
                    y[i] = diag[i] * x[i];
                }
                for (i, &s) in sub.iter().enumerate() {
                    y[i] += s * x[i + 1];
                }
                for (i, &s) in sup.iter().enumerate() {
                    y[i + 1] += s * x[i];
                }
                if n > 1 {
                    y[n - 1] += corner_tr * x[0];
                    y[0] += corner_bl * x[n - 1];
                }
            }
            Operator::Diagonal { d } => {
                for i in 0..n {
                    y[i] = d[i] * x[i];
                }
            }
        }
        Ok(y)
    }

    /// The transposed operator as an [`Operator`] value. Shift and subdiagonal
    /// patterns transpose into the tridiagonal-with-corners variant.
    pub fn transpose(&self) -> Operator {
        let n = self.n();
        match self {
            Operator::Shift { f, .. } => Operator::Tridiagonal {
                sub: vec![0.0; n.saturating_sub(1)],
                diag: vec![0.0; n],
                sup: vec![1.0; n.saturating_sub(1)],
                corner_tr: 0.0,
                corner_bl: *f,
            },
            Operator::Subdiagonal { sub, corner } => Operator::Tridiagonal {
                sub: vec![0.0; sub.len()],
                diag: vec![0.0; n],
                sup: sub.clone(),
                corner_tr: 0.0,
                corner_bl: *corner,
            },
            Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
                Operator::Tridiagonal {
                    sub: sup.clone(),
                    diag: diag.clone(),
                    sup: sub.clone(),
                    corner_tr: *corner_bl,
                    corner_bl: *corner_tr,
                }
            }
            Operator::Diagonal { d } => Operator::Diagonal { d: d.clone() },
        }
    }

    /// True when the variant is `Subdiagonal` (the fast multiplication path
    /// additionally requires `corner == 0`).
    pub fn is_subdiagonal(&self) -> bool {
        matches!(self, Operator::Subdiagonal { .. })
    }
}

/// Residual `R = A·M − M·B` of the displacement map applied to `M`.
pub fn displacement(m: &DenseMatrix, a: &Operator, b: &Operator) -> Result<DenseMatrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::DimMismatch { context: "displacement", expected: n, got: m.cols() });
    }
    if a.n() != n || b.n() != n {
        return Err(Error::DimMismatch {
            context: "displacement operator size",
            expected: n,
            got: a.n().max(b.n()),
        });
    }
    // A·M column by column through the sparse apply; M·B through the transpose
    // identity (M·B)ᵀ = Bᵀ·Mᵀ.
    let mut am = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = a.apply(m.col(j))?;
        am.col_mut(j).copy_from_slice(&col);
    }
    let mt = m.transpose();
    let mut mb_t = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = b.apply_transpose(mt.col(j))?;
        mb_t.col_mut(j).copy_from_slice(&col);
    }
    am.sub(&mb_t.transpose())
}

/// Krylov matrix `K(A, v)` with `i`-th column `Aⁱ v`, built by repeated
/// operator application in `O(n²)` time.
pub fn krylov(a: &Operator, v: &[f64]) -> Result<DenseMatrix> {
    let n = a.n();
    if v.len() != n {
        return Err(Error::DimMismatch { context: "krylov", expected: n, got: v.len() });
    }
    let mut k = DenseMatrix::zeros(n, n);
    let mut w = v.to_vec();
    for j in 0..n {
        k.col_mut(j).copy_from_slice(&w);
        if j + 1 < n {
            w = a.apply(&w)?;
        }
    }
    Ok(k)
}

/// The compressed representation: operators `A`, `B` and generator blocks
/// `G, H ∈ ℝ^{n×r}`, standing for `M = Σᵢ K(A, gᵢ)·K(Bᵀ, hᵢ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrMatrix {
    pub op_a: Operator,
    pub op_b: Operator,
    pub g: DenseMatrix,
    pub h: DenseMatrix,
}

impl LdrMatrix {
    /// Validates all size relations between the fields.
    pub fn new(op_a: Operator, op_b: Operator, g: DenseMatrix, h: DenseMatrix) -> Result<LdrMatrix> {
        let n = op_a.n();
        if op_b.n() != n {
            return Err(Error::DimMismatch { context: "LdrMatrix operators", expected: n, got: op_b.n() });
        }
        if g.rows() != n || h.rows() != n {
            return Err(Error::DimMismatch {
                context: "LdrMatrix generator rows",
                expected: n,
                got: if g.rows() != n { g.rows() } else { h.rows() },
            });
        }
        if g.cols() != h.cols() || g.cols() == 0 {
            return Err(Error::DimMismatch {
                context: "LdrMatrix generator width",
                expected: g.cols().max(1),
                got: h.cols(),
            });
        }
        Ok(LdrMatrix { op_a, op_b, g, h })
    }

    pub fn n(&self) -> usize {
        self.op_a.n()
    }

    /// Generator width `r` (the displacement-rank budget).
    pub fn rank(&self) -> usize {
        self.g.cols()
    }

    /// Dense `n×n` matrix of the representation — the oracle all fast paths
    /// are measured against.
    pub fn reconstruct(&self) -> Result<DenseMatrix> {
        let n = self.n();
        let bt = self.op_b.transpose();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..self.rank() {
            let ka = krylov(&self.op_a, self.g.col(i))?;
            let kb = krylov(&bt, self.h.col(i))?;
            m = m.add(&ka.matmul(&kb.transpose())?)?;
        }
        Ok(m)
    }

    /// Flat little-endian binary encoding: `n`, `r` (u64), operator tag + entries
    /// for `A` then `B`, then `G` and `H` column-major as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.n() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.rank() as u64).to_le_bytes());
        write_operator(&mut buf, &self.op_a);
        write_operator(&mut buf, &self.op_b);
        for v in self.g.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.h.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); errors carry the byte offset of
    /// the first malformed field.
    pub fn from_bytes(bytes: &[u8]) -> Result<LdrMatrix> {
        let mut rd = ByteReader { bytes, pos: 0 };
        let n = rd.u64()? as usize;
        let r = rd.u64()? as usize;
        if n == 0 || r == 0 {
            return Err(Error::Parse { line: 0, message: "zero matrix size or rank".into() });
        }
        let op_a = read_operator(&mut rd, n)?;
        let op_b = read_operator(&mut rd, n)?;
        let g = DenseMatrix::from_column_major(n, r, rd.f64_vec(n * r)?)?;
        let h = DenseMatrix::from_column_major(n, r, rd.f64_vec(n * r)?)?;
        if rd.pos != bytes.len() {
            return Err(Error::Parse { line: rd.pos, message: "trailing bytes after payload".into() });
        }
        LdrMatrix::new(op_a, op_b, g, h)
    }
}

const TAG_SHIFT: u8 = 0;
const TAG_SUBDIAGONAL: u8 = 1;
const TAG_TRIDIAGONAL: u8 = 2;
const TAG_DIAGONAL: u8 = 3;

fn write_operator(buf: &mut Vec<u8>, op: &Operator) {
    let push = |buf: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    };
    match op {
        Operator::Shift { f, .. } => {
            buf.push(TAG_SHIFT);
            push(buf, &[*f]);
        }
        Operator::Subdiagonal { sub, corner } => {
            buf.push(TAG_SUBDIAGONAL);
            push(buf, sub);
            push(buf, &[*corner]);
        }
        Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
            buf.push(TAG_TRIDIAGONAL);
            push(buf, sub);
            push(buf, diag);
            push(buf, sup);
            push(buf, &[*corner_tr, *corner_bl]);
        }
        Operator::Diagonal { d } => {
            buf.push(TAG_DIAGONAL);
            push(buf, d);
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn u64(&mut self) -> Result<u64> {
        let end = self.pos + 8;
        if end > self.bytes.len() {
            return Err(Error::Parse { line: self.pos, message: "truncated integer field".into() });
        }
        let v = u64::from_le_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.bytes.len() {
            return Err(Error::Parse { line: self.pos, message: "truncated tag byte".into() });
        }
        let v = self.bytes[self.pos];
        self.pos += 1;
        Ok(v)
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let end = self.pos + 8 * count;
        if end > self.bytes.len() {
            return Err(Error::Parse { line: self.pos, message: "truncated float array".into() });
        }
        let v = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(v)
    }
}

fn read_operator(rd: &mut ByteReader, n: usize) -> Result<Operator> {
    let tag_pos = rd.pos;
    let tag = rd.u8()?;
    match tag {
        TAG_SHIFT => Ok(Operator::Shift { n, f: rd.f64_vec(1)?[0] }),
        TAG_SUBDIAGONAL => {
            let sub = rd.f64_vec(n - 1)?;
            let corner = rd.f64_vec(1)?[0];
            Ok(Operator::Subdiagonal { sub, corner })
        }
        TAG_TRIDIAGONAL => {
            let sub = rd.f64_vec(n - 1)?;
            let diag = rd.f64_vec(n)?;
            let sup = rd.f64_vec(n - 1)?;
            let corners = rd.f64_vec(2)?;
            Ok(Operator::Tridiagonal {
                sub,
                diag,
                sup,
                corner_tr: corners[0],
                corner_bl: corners[1],
            })
        }
        TAG_DIAGONAL => Ok(Operator::Diagonal { d: rd.f64_vec(n)? }),
        other => Err(Error::Parse {
            line: tag_pos,
            message: format!("unknown operator tag {other}"),
        }),
    }
}

/// Recovers `M` from `A·M − M·B = R` by solving the vectorized system
/// `(I⊗A − Bᵀ⊗I)·vec(M) = vec(R)`.
///
/// Requires disjoint operator spectra; overlap shows up as a singular or
/// ill-conditioned system and is reported with the condition estimate. The
/// `n²×n²` factorization limits this to small sizes (`n ≤ 64`) — it is a
/// recovery oracle for tests and certificates, not a runtime code path.
pub fn sylvester_solve(a: &Operator, b: &Operator, r: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.n();
    if b.n() != n || r.rows() != n || r.cols() != n {
        return Err(Error::DimMismatch { context: "sylvester_solve", expected: n, got: r.rows() });
    }
    if n > 64 {
        return Err(Error::Config {
            message: format!("sylvester_solve is limited to n ≤ 64, got {n}"),
        });
    }
    let ad = a.densify();
    let bd = b.densify();
    let nn = n * n;
    // Column-major vec(): block (jb, ja) of the system matrix is
    // I(jb==ja)·A − B[ja][jb]·I.
    let mut sys = DenseMatrix::zeros(nn, nn);
    for jb in 0..n {
        for ja in 0..n {
            let bt = bd.get(ja, jb);
            for i in 0..n {
                for k in 0..n {
                    let mut v = if jb == ja { ad.get(i, k) } else { 0.0 };
                    if i == k {
                        v -= bt;
                    }
                    if v != 0.0 {
                        sys.set(jb * n + i, ja * n + k, v);
                    }
                }
            }
        }
    }
    let lu = LuFactors::factor(&sys).map_err(|e| match e {
        Error::IllConditioned { condition } => Error::SpectralOverlap { condition },
        other => other,
    })?;
    let m_vec = lu.solve(r.as_slice())?;
    DenseMatrix::from_column_major(n, n, m_vec)
}
