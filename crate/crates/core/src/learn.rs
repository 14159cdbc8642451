//! Gradient machinery and a small deterministic trainer.
//!
//! The representation is trained end-to-end: not only the generators `G, H`
//! but — for the subdiagonal and tridiagonal classes — the displacement
//! operators themselves. [`matvec_backward`] hand-derives reverse mode
//! through the `O(n²r)` Krylov-recurrence forward pass (the same recurrences
//! the slow multiply uses), extracting operator gradients directly on their
//! sparse patterns so nothing dense of size `n×n` is ever materialized for
//! them. [`finite_diff_grad`] is the central-difference oracle used to pin
//! every analytic gradient.
//!
//! The trainer is single-threaded and deterministic given a seed: fixed
//! batch order per epoch (seeded shuffle), classical momentum, best-model
//! selection by validation metric, and a binary checkpoint format that
//! round-trips exactly.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::displacement::{LdrMatrix, Operator};
use crate::error::{Error, Result};
use crate::fastmult::{ldr_matvec_slow, toeplitz_like_operators};
use crate::linalg::{singular_values, DenseMatrix};

/// Standard normal draw by the Box–Muller transform (the RNG crate in use
/// provides uniforms only).
fn normal(rng: &mut impl RngCore) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Operator parameter flattening
// ---------------------------------------------------------------------------

/// Number of learnable entries the variant exposes.
pub fn operator_param_count(op: &Operator) -> usize {
    match op {
        Operator::Shift { .. } => 0,
        Operator::Subdiagonal { sub, .. } => sub.len() + 1,
        Operator::Tridiagonal { sub, diag, sup, .. } => sub.len() + diag.len() + sup.len() + 2,
        Operator::Diagonal { d } => d.len(),
    }
}

/// Flattened learnable entries: subdiagonal is `[sub…, corner]`; tridiagonal
/// is `[sub…, diag…, sup…, corner_tr, corner_bl]`; diagonal is its entries;
/// the fixed shift has none.
pub fn operator_params(op: &Operator) -> Vec<f64> {
    match op {
        Operator::Shift { .. } => Vec::new(),
        Operator::Subdiagonal { sub, corner } => {
            let mut p = sub.clone();
            p.push(*corner);
            p
        }
        Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
            let mut p = Vec::with_capacity(sub.len() + diag.len() + sup.len() + 2);
            p.extend_from_slice(sub);
            p.extend_from_slice(diag);
            p.extend_from_slice(sup);
            p.push(*corner_tr);
            p.push(*corner_bl);
            p
        }
        Operator::Diagonal { d } => d.clone(),
    }
}

/// Writes a flattened parameter vector back into the operator.
pub fn operator_set_params(op: &mut Operator, p: &[f64]) -> Result<()> {
    if p.len() != operator_param_count(op) {
        return Err(Error::DimMismatch {
            context: "operator params",
            expected: operator_param_count(op),
            got: p.len(),
        });
    }
    match op {
        Operator::Shift { .. } => {}
        Operator::Subdiagonal { sub, corner } => {
            let k = sub.len();
            sub.copy_from_slice(&p[..k]);
            *corner = p[k];
        }
        Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
            let (ns, nd) = (sub.len(), diag.len());
            sub.copy_from_slice(&p[..ns]);
            diag.copy_from_slice(&p[ns..ns + nd]);
            sup.copy_from_slice(&p[ns + nd..ns + nd + ns]);
            *corner_tr = p[2 * ns + nd];
            *corner_bl = p[2 * ns + nd + 1];
        }
        Operator::Diagonal { d } => d.copy_from_slice(p),
    }
    Ok(())
}

/// Accumulates `left·rightᵀ` restricted to the operator's learnable pattern
/// into `out` (laid out like [`operator_params`]).
fn accumulate_operator_grad(
    op: &Operator,
    out: &mut [f64],
    left: &DenseMatrix,
    right: &DenseMatrix,
) {
    let n = op.n();
    let b = left.cols();
    let entry = |p: usize, q: usize| -> f64 {
        let mut acc = 0.0;
        for j in 0..b {
            acc += left.get(p, j) * right.get(q, j);
        }
        acc
    };
    match op {
        Operator::Shift { .. } => {}
        Operator::Subdiagonal { sub, .. } => {
            for i in 0..sub.len() {
                out[i] += entry(i + 1, i);
            }
            out[sub.len()] += entry(0, n - 1);
        }
        Operator::Tridiagonal { sub, diag, sup, .. } => {
            let (ns, nd) = (sub.len(), diag.len());
            for i in 0..ns {
                out[i] += entry(i + 1, i);
            }
            for i in 0..nd {
                out[ns + i] += entry(i, i);
            }
            for i in 0..sup.len() {
                out[ns + nd + i] += entry(i, i + 1);
            }
            out[2 * ns + nd] += entry(0, n - 1);
            out[2 * ns + nd + 1] += entry(n - 1, 0);
        }
        Operator::Diagonal { d } => {
            for i in 0..d.len() {
                out[i] += entry(i, i);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reverse-mode gradients of the matvec
// ---------------------------------------------------------------------------

/// Gradients of a scalar loss with respect to everything the representation
/// can learn, given the upstream sensitivity `dY`.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Laid out like [`operator_params`] of `op_a`.
    pub d_op_a: Vec<f64>,
    /// Laid out like [`operator_params`] of `op_b`.
    pub d_op_b: Vec<f64>,
    pub d_g: DenseMatrix,
    pub d_h: DenseMatrix,
    pub d_x: DenseMatrix,
}

/// Exact reverse-mode gradients of `Y = M·X` (slow Krylov-recurrence path)
/// for upstream `dY`: the recurrences `w_k = B·w_{k−1}` and the Horner
/// accumulation `α_k = A·α_{k+1} + G·t_k` are replayed forward with their
/// intermediates kept, then transposed step by step. Operator gradients are
/// read off the sparse patterns directly.
pub fn matvec_backward(m: &LdrMatrix, x: &DenseMatrix, dy: &DenseMatrix) -> Result<Gradients> {
    let n = m.n();
    let r = m.rank();
    let b = x.cols();
    if x.rows() != n || dy.rows() != n || dy.cols() != b {
        return Err(Error::DimMismatch {
            context: "matvec_backward",
            expected: n,
            got: if x.rows() != n { x.rows() } else { dy.rows() },
        });
    }

    // Forward replay, keeping w_k = Bᵏ·X, t_k = Hᵀ·w_k, and the Horner
    // partials α_k = Σ_{j≥k} A^{j−k}·G·t_j.
    let mut w_list: Vec<DenseMatrix> = Vec::with_capacity(n);
    w_list.push(x.clone());
    for k in 1..n {
        let prev = &w_list[k - 1];
        let mut next = DenseMatrix::zeros(n, b);
        for j in 0..b {
            let col = m.op_b.apply(prev.col(j))?;
            next.col_mut(j).copy_from_slice(&col);
        }
        w_list.push(next);
    }
    let mut t_list: Vec<DenseMatrix> = Vec::with_capacity(n);
    for w in &w_list {
        let mut t = DenseMatrix::zeros(r, b);
        for i in 0..r {
            let h_i = m.h.col(i);
            for j in 0..b {
                let wj = w.col(j);
                let mut dot = 0.0;
                for p in 0..n {
                    dot += h_i[p] * wj[p];
                }
                t.set(i, j, dot);
            }
        }
        t_list.push(t);
    }
    let mut alphas: Vec<DenseMatrix> = vec![DenseMatrix::zeros(n, b); n + 1];
    for k in (0..n).rev() {
        let mut acc = DenseMatrix::zeros(n, b);
        for j in 0..b {
            let col = m.op_a.apply(alphas[k + 1].col(j))?;
            acc.col_mut(j).copy_from_slice(&col);
        }
        for i in 0..r {
            let g_i = m.g.col(i);
            for j in 0..b {
                let c = t_list[k].get(i, j);
                if c != 0.0 {
                    let col = acc.col_mut(j);
                    for p in 0..n {
                        col[p] += g_i[p] * c;
                    }
                }
            }
        }
        alphas[k] = acc;
    }

    let mut d_op_a = vec![0.0; operator_param_count(&m.op_a)];
    let mut d_op_b = vec![0.0; operator_param_count(&m.op_b)];
    let mut d_g = DenseMatrix::zeros(n, r);
    let mut d_h = DenseMatrix::zeros(n, r);
    let mut dt_list: Vec<DenseMatrix> = Vec::with_capacity(n);

    // Transpose of the Horner chain: ā starts as dY = ∂L/∂α_0.
    let mut abar = dy.clone();
    for k in 0..n {
        // α_k = A·α_{k+1} + G·t_k
        for i in 0..r {
            for p in 0..n {
                let mut acc = d_g.get(p, i);
                for j in 0..b {
                    acc += abar.get(p, j) * t_list[k].get(i, j);
                }
                d_g.set(p, i, acc);
            }
        }
        let mut dt = DenseMatrix::zeros(r, b);
        for i in 0..r {
            let g_i = m.g.col(i);
            for j in 0..b {
                let aj = abar.col(j);
                let mut dot = 0.0;
                for p in 0..n {
                    dot += g_i[p] * aj[p];
                }
                dt.set(i, j, dot);
            }
        }
        dt_list.push(dt);
        if k + 1 < n {
            accumulate_operator_grad(&m.op_a, &mut d_op_a, &abar, &alphas[k + 1]);
        }
        if k + 1 < n {
            let mut next = DenseMatrix::zeros(n, b);
            for j in 0..b {
                let col = m.op_a.apply_transpose(abar.col(j))?;
                next.col_mut(j).copy_from_slice(&col);
            }
            abar = next;
        }
    }

    // Transpose of the w-chain, walked from the last power down to X.
    let mut wbar = DenseMatrix::zeros(n, b);
    for k in (0..n).rev() {
        // t_k = Hᵀ·w_k
        let dt = &dt_list[k];
        for i in 0..r {
            for p in 0..n {
                let mut acc = d_h.get(p, i);
                for j in 0..b {
                    acc += w_list[k].get(p, j) * dt.get(i, j);
                }
                d_h.set(p, i, acc);
            }
        }
        for j in 0..b {
            let col = wbar.col_mut(j);
            for i in 0..r {
                let c = dt.get(i, j);
                if c != 0.0 {
                    let h_i = m.h.col(i);
                    for p in 0..n {
                        col[p] += h_i[p] * c;
                    }
                }
            }
        }
        if k > 0 {
            accumulate_operator_grad(&m.op_b, &mut d_op_b, &wbar, &w_list[k - 1]);
            let mut next = DenseMatrix::zeros(n, b);
            for j in 0..b {
                let col = m.op_b.apply_transpose(wbar.col(j))?;
                next.col_mut(j).copy_from_slice(&col);
            }
            wbar = next;
        }
    }

    Ok(Gradients { d_op_a, d_op_b, d_g, d_h, d_x: wbar })
}

/// Central-difference gradients of `loss(M·X)` over every learnable
/// coordinate — the oracle for [`matvec_backward`].
pub fn finite_diff_grad<F>(
    m: &LdrMatrix,
    x: &DenseMatrix,
    loss: F,
    step: f64,
) -> Result<Gradients>
where
    F: Fn(&DenseMatrix) -> f64,
{
    if step <= 0.0 {
        return Err(Error::Config { message: "finite difference step must be positive".into() });
    }
    let eval = |mm: &LdrMatrix, xx: &DenseMatrix| -> Result<f64> {
        Ok(loss(&ldr_matvec_slow(mm, xx)?))
    };
    let n = m.n();
    let r = m.rank();

    let probe_op = |which_a: bool| -> Result<Vec<f64>> {
        let base = if which_a { &m.op_a } else { &m.op_b };
        let params = operator_params(base);
        let mut grads = vec![0.0; params.len()];
        for idx in 0..params.len() {
            let mut trial = m.clone();
            for (sign, slot) in [(1.0, 0usize), (-1.0, 1usize)] {
                let mut p = params.clone();
                p[idx] += sign * step;
                {
                    let op = if which_a { &mut trial.op_a } else { &mut trial.op_b };
                    operator_set_params(op, &p)?;
                }
                let val = eval(&trial, x)?;
                grads[idx] += if slot == 0 { val } else { -val };
            }
            grads[idx] /= 2.0 * step;
        }
        Ok(grads)
    };
    let d_op_a = probe_op(true)?;
    let d_op_b = probe_op(false)?;

    let probe_matrix = |target: usize, rows: usize, cols: usize| -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let mut plus = m.clone();
                let mut x_plus = x.clone();
                let mut minus = m.clone();
                let mut x_minus = x.clone();
                match target {
                    0 => {
                        plus.g.set(i, j, plus.g.get(i, j) + step);
                        minus.g.set(i, j, minus.g.get(i, j) - step);
                    }
                    1 => {
                        plus.h.set(i, j, plus.h.get(i, j) + step);
                        minus.h.set(i, j, minus.h.get(i, j) - step);
                    }
                    _ => {
                        x_plus.set(i, j, x_plus.get(i, j) + step);
                        x_minus.set(i, j, x_minus.get(i, j) - step);
                    }
                }
                let d = (eval(&plus, &x_plus)? - eval(&minus, &x_minus)?) / (2.0 * step);
                out.set(i, j, d);
            }
        }
        Ok(out)
    };
    let d_g = probe_matrix(0, n, r)?;
    let d_h = probe_matrix(1, n, r)?;
    let d_x = probe_matrix(2, n, x.cols())?;

    Ok(Gradients { d_op_a, d_op_b, d_g, d_h, d_x })
}

// ---------------------------------------------------------------------------
// Model classes
// ---------------------------------------------------------------------------

/// The seven trainable weight classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassName {
    Unstructured,
    LowRank,
    ToeplitzLike,
    HankelLike,
    VandermondeLike,
    LdrSd,
    LdrTd,
}

impl ClassName {
    pub fn parse(s: &str) -> Result<ClassName> {
        match s {
            "unstructured" => Ok(ClassName::Unstructured),
            "low-rank" => Ok(ClassName::LowRank),
            "toeplitz-like" => Ok(ClassName::ToeplitzLike),
            "hankel-like" => Ok(ClassName::HankelLike),
            "vandermonde-like" => Ok(ClassName::VandermondeLike),
            "ldr-sd" => Ok(ClassName::LdrSd),
            "ldr-td" => Ok(ClassName::LdrTd),
            other => Err(Error::Config { message: format!("unknown class '{other}'") }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassName::Unstructured => "unstructured",
            ClassName::LowRank => "low-rank",
            ClassName::ToeplitzLike => "toeplitz-like",
            ClassName::HankelLike => "hankel-like",
            ClassName::VandermondeLike => "vandermonde-like",
            ClassName::LdrSd => "ldr-sd",
            ClassName::LdrTd => "ldr-td",
        }
    }

    pub fn all() -> [ClassName; 7] {
        [
            ClassName::Unstructured,
            ClassName::LowRank,
            ClassName::ToeplitzLike,
            ClassName::HankelLike,
            ClassName::VandermondeLike,
            ClassName::LdrSd,
            ClassName::LdrTd,
        ]
    }

    /// Whether the displacement operators themselves are trained.
    pub fn learns_operators(&self) -> bool {
        matches!(self, ClassName::LdrSd | ClassName::LdrTd)
    }
}

/// A trainable square weight matrix in one of the seven classes.
#[derive(Debug, Clone)]
pub enum Model {
    Dense { w: DenseMatrix },
    LowRank { u: DenseMatrix, v: DenseMatrix },
    Ldr { class: ClassName, m: LdrMatrix },
}

/// Fixed diagonal nodes for the Vandermonde-like slots: distinct, positive,
/// bounded away from zero and one so Krylov powers neither vanish nor blow up.
fn vandermonde_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|j| 0.1 + 0.8 * (j as f64 + 0.5) / n as f64).collect()
}

impl Model {
    /// Class-specific initialization. Operators start at the unit-subdiagonal
    /// pattern (corner 0 on the left slot, −1 on the right) and generators at
    /// i.i.d. normal with standard deviation `1/√(n·r)`.
    pub fn init(class: ClassName, n: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<Model> {
        if n == 0 || r == 0 {
            return Err(Error::InvalidLength { len: n.min(r) });
        }
        let sd = 1.0 / ((n * r) as f64).sqrt();
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            DenseMatrix::from_fn(rows, cols, |_, _| scale * normal(rng))
        };
        Ok(match class {
            ClassName::Unstructured => {
                let scale = 1.0 / (n as f64).sqrt();
                Model::Dense { w: gauss(n, n, scale) }
            }
            ClassName::LowRank => {
                Model::LowRank { u: gauss(n, r, sd), v: gauss(n, r, sd) }
            }
            ClassName::ToeplitzLike => {
                let g = gauss(n, r, sd);
                let h = gauss(n, r, sd);
                let (a, b) = toeplitz_like_operators(n);
                Model::Ldr { class, m: LdrMatrix::new(a, b, g, h)? }
            }
            ClassName::HankelLike => {
                let g = gauss(n, r, sd);
                let h = gauss(n, r, sd);
                Model::Ldr {
                    class,
                    m: LdrMatrix::new(
                        Operator::unit_superdiagonal(n, 1.0),
                        Operator::unit_superdiagonal(n, 0.0),
                        g,
                        h,
                    )?,
                }
            }
            ClassName::VandermondeLike => {
                let g = gauss(n, r, sd);
                let h = gauss(n, r, sd);
                Model::Ldr {
                    class,
                    m: LdrMatrix::new(
                        Operator::Diagonal { d: vandermonde_nodes(n) },
                        Operator::shift(n, 0.0),
                        g,
                        h,
                    )?,
                }
            }
            ClassName::LdrSd => {
                let g = gauss(n, r, sd);
                let h = gauss(n, r, sd);
                Model::Ldr {
                    class,
                    m: LdrMatrix::new(
                        Operator::unit_subdiagonal(n, 1.0),
                        Operator::unit_subdiagonal(n, -1.0),
                        g,
                        h,
                    )?,
                }
            }
            ClassName::LdrTd => {
                let g = gauss(n, r, sd);
                let h = gauss(n, r, sd);
                let tridiag = |corner_tr: f64| Operator::Tridiagonal {
                    sub: vec![1.0; n - 1],
                    diag: vec![0.0; n],
                    sup: vec![0.0; n - 1],
                    corner_tr,
                    corner_bl: 0.0,
                };
                Model::Ldr {
                    class,
                    m: LdrMatrix::new(tridiag(0.0), tridiag(-1.0), g, h)?,
                }
            }
        })
    }

    pub fn class(&self) -> ClassName {
        match self {
            Model::Dense { .. } => ClassName::Unstructured,
            Model::LowRank { .. } => ClassName::LowRank,
            Model::Ldr { class, .. } => *class,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Model::Dense { w } => w.rows(),
            Model::LowRank { u, .. } => u.rows(),
            Model::Ldr { m, .. } => m.n(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Model::Dense { w } => w.rows(),
            Model::LowRank { u, .. } => u.cols(),
            Model::Ldr { m, .. } => m.rank(),
        }
    }

    /// The dense matrix the model currently represents.
    pub fn densify(&self) -> Result<DenseMatrix> {
        match self {
            Model::Dense { w } => Ok(w.clone()),
            Model::LowRank { u, v } => u.matmul(&v.transpose()),
            Model::Ldr { m, .. } => m.reconstruct(),
        }
    }

    /// `Y = M·X` through the class's own forward path.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Model::Dense { w } => w.matmul(x),
            Model::LowRank { u, v } => u.matmul(&v.transpose().matmul(x)?),
            Model::Ldr { m, .. } => ldr_matvec_slow(m, x),
        }
    }

    /// All learnable coordinates, flattened in a fixed order (operator
    /// entries are included for every representation class; the trainer
    /// zeroes their gradients when the class keeps them fixed).
    pub fn params(&self) -> Vec<f64> {
        match self {
            Model::Dense { w } => w.as_slice().to_vec(),
            Model::LowRank { u, v } => {
                let mut p = u.as_slice().to_vec();
                p.extend_from_slice(v.as_slice());
                p
            }
            Model::Ldr { m, .. } => {
                let mut p = operator_params(&m.op_a);
                p.extend(operator_params(&m.op_b));
                p.extend_from_slice(m.g.as_slice());
                p.extend_from_slice(m.h.as_slice());
                p
            }
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let expected = self.params().len();
        if p.len() != expected {
            return Err(Error::DimMismatch {
                context: "model params",
                expected,
                got: p.len(),
            });
        }
        match self {
            Model::Dense { w } => w.as_mut_slice().copy_from_slice(p),
            Model::LowRank { u, v } => {
                let k = u.as_slice().len();
                u.as_mut_slice().copy_from_slice(&p[..k]);
                v.as_mut_slice().copy_from_slice(&p[k..]);
            }
            Model::Ldr { m, .. } => {
                let ka = operator_param_count(&m.op_a);
                let kb = operator_param_count(&m.op_b);
                operator_set_params(&mut m.op_a, &p[..ka])?;
                operator_set_params(&mut m.op_b, &p[ka..ka + kb])?;
                let kg = m.g.as_slice().len();
                m.g.as_mut_slice().copy_from_slice(&p[ka + kb..ka + kb + kg]);
                m.h.as_mut_slice().copy_from_slice(&p[ka + kb + kg..]);
            }
        }
        Ok(())
    }

    /// Flat gradient vector matching [`Model::params`], for upstream `dY`.
    /// Operator gradients are zeroed for classes that keep operators fixed.
    pub fn backward(&self, x: &DenseMatrix, dy: &DenseMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Dense { .. } => {
                // dW = dY·Xᵀ, column-major like the parameter layout.
                let dw = dy.matmul(&x.transpose())?;
                Ok(dw.as_slice().to_vec())
            }
            Model::LowRank { u, v } => {
                let vtx = v.transpose().matmul(x)?;
                let du = dy.matmul(&vtx.transpose())?;
                let dv = x.matmul(&dy.transpose().matmul(u)?)?;
                let mut g = du.as_slice().to_vec();
                g.extend_from_slice(dv.as_slice());
                Ok(g)
            }
            Model::Ldr { class, m } => {
                let grads = matvec_backward(m, x, dy)?;
                let mut flat = if class.learns_operators() {
                    let mut f = grads.d_op_a;
                    f.extend(grads.d_op_b);
                    f
                } else {
                    vec![0.0; operator_param_count(&m.op_a) + operator_param_count(&m.op_b)]
                };
                flat.extend_from_slice(grads.d_g.as_slice());
                flat.extend_from_slice(grads.d_h.as_slice());
                Ok(flat)
            }
        }
    }
}

/// Central-difference gradient of `loss(model.forward(x))` over the flat
/// parameter vector — the class-agnostic oracle for [`Model::backward`].
/// Coordinates the class keeps fixed (operator entries of the fixed-operator
/// classes) are reported as zero to match.
pub fn model_finite_diff<F>(model: &Model, x: &DenseMatrix, loss: F, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&DenseMatrix) -> f64,
{
    let base = model.params();
    let mut out = vec![0.0; base.len()];
    let fixed_ops = match model {
        Model::Ldr { class, m } if !class.learns_operators() => {
            operator_param_count(&m.op_a) + operator_param_count(&m.op_b)
        }
        _ => 0,
    };
    for idx in 0..base.len() {
        if idx < fixed_ops {
            continue;
        }
        let mut trial = model.clone();
        let mut p = base.clone();
        p[idx] += step;
        trial.set_params(&p)?;
        let plus = loss(&trial.forward(x)?);
        p[idx] = base[idx] - step;
        trial.set_params(&p)?;
        let minus = loss(&trial.forward(x)?);
        out[idx] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Single-hidden-layer model
// ---------------------------------------------------------------------------

/// Hidden layer (square, bias-free, optionally structured) followed by a
/// dense softmax layer with bias.
#[derive(Debug, Clone)]
pub struct ShlModel {
    pub w1: Model,
    pub w2: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Activations retained for the backward pass.
pub struct ShlCache {
    pub pre_act: DenseMatrix,
    pub hidden: DenseMatrix,
}

/// `logits = W2·relu(W1·x) + bias`, batch in columns.
pub fn shl_forward(model: &ShlModel, x: &DenseMatrix) -> Result<(DenseMatrix, ShlCache)> {
    let pre = model.w1.forward(x)?;
    let mut hidden = pre.clone();
    for v in hidden.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut logits = model.w2.matmul(&hidden)?;
    for j in 0..logits.cols() {
        let col = logits.col_mut(j);
        for (i, bi) in model.bias.iter().enumerate() {
            col[i] += bi;
        }
    }
    Ok((logits, ShlCache { pre_act: pre, hidden }))
}

/// Backward through the softmax layer and the ReLU given `d_logits`; returns
/// (flat W1 grads, dW2, dbias).
pub fn shl_backward(
    model: &ShlModel,
    x: &DenseMatrix,
    cache: &ShlCache,
    d_logits: &DenseMatrix,
) -> Result<(Vec<f64>, DenseMatrix, Vec<f64>)> {
    let d_w2 = d_logits.matmul(&cache.hidden.transpose())?;
    let mut d_bias = vec![0.0; model.bias.len()];
    for j in 0..d_logits.cols() {
        for i in 0..d_logits.rows() {
            d_bias[i] += d_logits.get(i, j);
        }
    }
    let mut d_hidden = model.w2.transpose().matmul(d_logits)?;
    for (dv, pre) in d_hidden.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
        if *pre <= 0.0 {
            *dv = 0.0;
        }
    }
    let d_w1 = model.w1.backward(x, &d_hidden)?;
    Ok((d_w1, d_w2, d_bias))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// One classical-momentum step in place: `v ← momentum·v − lr·g; p ← p + v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] - lr * grads[i];
        params[i] += velocity[i];
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Sample targets: a dense regression target block or class labels.
#[derive(Debug, Clone)]
pub enum Task {
    Regression { targets: DenseMatrix },
    Classification { labels: Vec<usize>, num_classes: usize },
}

/// A dataset with samples in columns. Synthetic regressions carry their
/// ground-truth matrix and its singular values for floor computations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub task: Task,
    pub target_matrix: Option<DenseMatrix>,
    pub target_singular_values: Option<Vec<f64>>,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.inputs.cols()
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let n = self.inputs.rows();
        let mut inputs = DenseMatrix::zeros(n, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            inputs.col_mut(c).copy_from_slice(self.inputs.col(i));
        }
        let task = match &self.task {
            Task::Regression { targets } => {
                let mut t = DenseMatrix::zeros(targets.rows(), idx.len());
                for (c, &i) in idx.iter().enumerate() {
                    t.col_mut(c).copy_from_slice(targets.col(i));
                }
                Task::Regression { targets: t }
            }
            Task::Classification { labels, num_classes } => Task::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        };
        Dataset {
            inputs,
            task,
            target_matrix: self.target_matrix.clone(),
            target_singular_values: self.target_singular_values.clone(),
        }
    }
}

/// Deterministic validation split: a seeded shuffle, with
/// `max(1, ⌊0.15·samples⌋)` samples held out.
pub fn split_dataset(ds: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let total = ds.samples();
    let mut idx: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..total).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_val = ((total as f64) * 0.15).floor().max(1.0) as usize;
    let (val_idx, train_idx) = idx.split_at(n_val.min(total));
    (ds.select(train_idx), ds.select(val_idx))
}

/// Regression pairs `(x, T·x + noise·ε)` from a full-rank random Toeplitz
/// matrix with standard-normal diagonals; deterministic in the seed. The
/// drawn matrix and its singular values ride along with the dataset.
pub fn synth_shift_task(n: usize, samples: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diags: Vec<f64> = (0..2 * n - 1).map(|_| normal(&mut rng)).collect();
    let t = DenseMatrix::from_fn(n, n, |i, j| diags[i + n - 1 - j]);
    let inputs = DenseMatrix::from_fn(n, samples, |_, _| normal(&mut rng));
    let mut targets = t.matmul(&inputs)?;
    if noise != 0.0 {
        for v in targets.as_mut_slice() {
            *v += noise * normal(&mut rng);
        }
    }
    let sigma = singular_values(&t)?;
    Ok(Dataset {
        inputs,
        task: Task::Regression { targets },
        target_matrix: Some(t),
        target_singular_values: Some(sigma),
    })
}

/// Loads a numeric, headerless CSV (one sample per row), min-max scales each
/// feature column to `[0, 1]`, and returns the `(train, validation)` split.
/// The label column becomes a classification target when every label is a
/// non-negative integer, a scalar regression target otherwise.
pub fn load_csv_dataset(path: &str, label_col: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if let Some(w) = width {
            if cells.len() != w {
                return Err(Error::Parse {
                    line: line_no + 1,
                    message: format!("expected {w} columns, found {}", cells.len()),
                });
            }
        } else {
            if cells.len() < 2 {
                return Err(Error::Parse {
                    line: line_no + 1,
                    message: "need at least one feature and one label column".into(),
                });
            }
            if label_col >= cells.len() {
                return Err(Error::Config {
                    message: format!(
                        "label column {label_col} out of range for {} columns",
                        cells.len()
                    ),
                });
            }
            width = Some(cells.len());
        }
        let mut feats = Vec::with_capacity(cells.len() - 1);
        for (c, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no + 1,
                message: format!("non-numeric cell '{}'", cell.trim()),
            })?;
            if c == label_col {
                labels.push(value);
            } else {
                feats.push(value);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, message: "empty dataset".into() });
    }
    let n_feat = rows[0].len();
    let samples = rows.len();
    // Min-max scale each feature over the full dataset.
    for f in 0..n_feat {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &rows {
            lo = lo.min(row[f]);
            hi = hi.max(row[f]);
        }
        let span = hi - lo;
        for row in &mut rows {
            row[f] = if span > 0.0 { (row[f] - lo) / span } else { 0.0 };
        }
    }
    let inputs = DenseMatrix::from_fn(n_feat, samples, |i, j| rows[j][i]);
    let classification = labels.iter().all(|&v| v >= 0.0 && v.fract() == 0.0);
    let task = if classification {
        let ids: Vec<usize> = labels.iter().map(|&v| v as usize).collect();
        let num_classes = ids.iter().copied().max().unwrap_or(0) + 1;
        Task::Classification { labels: ids, num_classes }
    } else {
        Task::Regression { targets: DenseMatrix::from_fn(1, samples, |_, j| labels[j]) }
    };
    let ds = Dataset { inputs, task, target_matrix: None, target_singular_values: None };
    Ok(split_dataset(&ds, seed))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn default_momentum() -> f64 {
    0.9
}

fn default_batch() -> usize {
    50
}

fn default_dataset() -> String {
    "synth".into()
}

fn default_n() -> usize {
    64
}

fn default_samples() -> usize {
    2000
}

/// Flat training configuration, deserialized from JSON. Unknown keys and a
/// missing `rank` are schema errors.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub class: String,
    pub rank: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// `"synth"` or a CSV path.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Synthetic-task dimension (power of two).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub label_col: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<ClassName> {
        let class = ClassName::parse(&self.class)?;
        if self.rank == 0 {
            return Err(Error::Config { message: "rank must be at least 1".into() });
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config { message: "learning rate must be positive".into() });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config {
                message: "epochs and batch_size must be at least 1".into(),
            });
        }
        Ok(class)
    }
}

/// One history row: epoch number (1-based), mean training loss, validation
/// metric (relative reconstruction error or validation loss for regression,
/// accuracy for classification).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Whether larger validation metrics are better (classification accuracy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    LowerIsBetter,
    HigherIsBetter,
}

/// A trained model snapshot: the weight matrix plus, for classification, the
/// softmax layer.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub w2: Option<DenseMatrix>,
    pub bias: Option<Vec<f64>>,
}

/// Everything `train` produces: the per-epoch history and the
/// best-by-validation checkpoint.
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub metric_kind: MetricKind,
}

impl TrainOutcome {
    /// History as the stable CSV schema `epoch,train_loss,val_metric`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for row in &self.history {
            let _ = writeln!(out, "{},{},{}", row.epoch, row.train_loss, row.val_metric);
        }
        out
    }
}

fn mse_and_grad(pred: &DenseMatrix, target: &DenseMatrix) -> (f64, DenseMatrix) {
    let count = (pred.rows() * pred.cols()) as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
    for j in 0..pred.cols() {
        for i in 0..pred.rows() {
            let d = pred.get(i, j) - target.get(i, j);
            loss += d * d;
            grad.set(i, j, 2.0 * d / count);
        }
    }
    (loss / count, grad)
}

fn softmax_ce_and_grad(logits: &DenseMatrix, labels: &[usize]) -> (f64, DenseMatrix) {
    let b = logits.cols();
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    for j in 0..b {
        let col = logits.col(j);
        let mx = col.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0;
        for &v in col {
            z += (v - mx).exp();
        }
        loss += z.ln() + mx - col[labels[j]];
        for i in 0..logits.rows() {
            let p = (col[i] - mx).exp() / z;
            let y = if i == labels[j] { 1.0 } else { 0.0 };
            grad.set(i, j, (p - y) / b as f64);
        }
    }
    (loss / b as f64, grad)
}

/// Relative reconstruction error `‖M̂ − T‖_F / ‖T‖_F` of the model against a
/// target matrix — the validation metric of the synthetic task.
pub fn relative_matvec_error(model: &Model, target: &DenseMatrix) -> Result<f64> {
    let dense = model.densify()?;
    Ok(dense.sub(target)?.frobenius_norm() / target.frobenius_norm().max(1e-300))
}

/// Trains per the configuration: deterministic given the seed (the
/// `LDR_SEED` environment variable overrides it), classical momentum,
/// best-by-validation selection. Non-finite losses abort with the epoch.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let class = config.validate()?;
    let seed = match std::env::var("LDR_SEED") {
        Ok(s) => s.parse::<u64>().map_err(|_| Error::Config {
            message: format!("LDR_SEED must be an unsigned integer, got '{s}'"),
        })?,
        Err(_) => config.seed,
    };

    let (train_ds, val_ds) = if config.dataset == "synth" {
        let full = synth_shift_task(config.n, config.samples, config.noise, seed)?;
        split_dataset(&full, seed)
    } else {
        load_csv_dataset(&config.dataset, config.label_col, seed)?
    };
    let n = train_ds.inputs.rows();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e11);
    let mut model = Model::init(class, n, config.rank, &mut rng)?;
    let (mut w2, mut bias, num_classes) = match &train_ds.task {
        Task::Classification { num_classes, .. } => {
            let scale = 1.0 / (n as f64).sqrt();
            let w2 = DenseMatrix::from_fn(*num_classes, n, |_, _| scale * normal(&mut rng));
            (Some(w2), Some(vec![0.0; *num_classes]), *num_classes)
        }
        Task::Regression { targets } => {
            if targets.rows() != n && train_ds.target_matrix.is_some() {
                return Err(Error::DimMismatch {
                    context: "regression target",
                    expected: n,
                    got: targets.rows(),
                });
            }
            (None, None, 0)
        }
    };
    // Scalar-target CSV regression still maps through the square weight
    // matrix; the first output row is compared against the label.
    let metric_kind = match &train_ds.task {
        Task::Classification { .. } => MetricKind::HigherIsBetter,
        Task::Regression { .. } => MetricKind::LowerIsBetter,
    };

    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut velocity_w2 = w2.as_ref().map(|m| vec![0.0; m.as_slice().len()]);
    let mut velocity_bias = bias.as_ref().map(|b| vec![0.0; b.len()]);

    let total = train_ds.samples();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint, usize)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..total).collect();
        for i in (1..total).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = {
                let mut x = DenseMatrix::zeros(n, chunk.len());
                for (c, &i) in chunk.iter().enumerate() {
                    x.col_mut(c).copy_from_slice(train_ds.inputs.col(i));
                }
                x
            };
            let (loss, flat_grads, d_w2, d_bias) = match &train_ds.task {
                Task::Regression { targets } => {
                    let mut tb = DenseMatrix::zeros(targets.rows(), chunk.len());
                    for (c, &i) in chunk.iter().enumerate() {
                        tb.col_mut(c).copy_from_slice(targets.col(i));
                    }
                    let pred = model.forward(&xb)?;
                    if targets.rows() == n {
                        let (loss, dy) = mse_and_grad(&pred, &tb);
                        (loss, model.backward(&xb, &dy)?, None, None)
                    } else {
                        // Scalar target: compare the first output coordinate.
                        let first = DenseMatrix::from_fn(1, chunk.len(), |_, j| pred.get(0, j));
                        let (loss, dy_row) = mse_and_grad(&first, &tb);
                        let mut dy = DenseMatrix::zeros(n, chunk.len());
                        for j in 0..chunk.len() {
                            dy.set(0, j, dy_row.get(0, j));
                        }
                        (loss, model.backward(&xb, &dy)?, None, None)
                    }
                }
                Task::Classification { labels, .. } => {
                    let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    let shl = ShlModel {
                        w1: model.clone(),
                        w2: w2.clone().expect("classification has w2"),
                        bias: bias.clone().expect("classification has bias"),
                    };
                    let (logits, cache) = shl_forward(&shl, &xb)?;
                    let (loss, d_logits) = softmax_ce_and_grad(&logits, &lb);
                    let (d_w1, d_w2, d_bias) = shl_backward(&shl, &xb, &cache, &d_logits)?;
                    (loss, d_w1, Some(d_w2), Some(d_bias))
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sgd_step(&mut params, &flat_grads, &mut velocity, config.lr, config.momentum);
            model.set_params(&params)?;
            if let (Some(w2m), Some(dm), Some(vel)) =
                (w2.as_mut(), d_w2.as_ref(), velocity_w2.as_mut())
            {
                sgd_step(w2m.as_mut_slice(), dm.as_slice(), vel, config.lr, config.momentum);
            }
            if let (Some(bv), Some(db), Some(vel)) =
                (bias.as_mut(), d_bias.as_ref(), velocity_bias.as_mut())
            {
                sgd_step(bv, db, vel, config.lr, config.momentum);
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = epoch_loss / seen.max(1) as f64;

        let val_metric = match &val_ds.task {
            Task::Regression { targets } => {
                if let Some(t) = &train_ds.target_matrix {
                    relative_matvec_error(&model, t)?
                } else {
                    let pred = model.forward(&val_ds.inputs)?;
                    if targets.rows() == n {
                        mse_and_grad(&pred, targets).0
                    } else {
                        let first =
                            DenseMatrix::from_fn(1, val_ds.samples(), |_, j| pred.get(0, j));
                        mse_and_grad(&first, targets).0
                    }
                }
            }
            Task::Classification { labels, .. } => {
                let shl = ShlModel {
                    w1: model.clone(),
                    w2: w2.clone().expect("classification has w2"),
                    bias: bias.clone().expect("classification has bias"),
                };
                let (logits, _) = shl_forward(&shl, &val_ds.inputs)?;
                let mut correct = 0usize;
                for j in 0..logits.cols() {
                    let col = logits.col(j);
                    let mut arg = 0usize;
                    for i in 1..col.len() {
                        if col[i] > col[arg] {
                            arg = i;
                        }
                    }
                    if arg == labels[j] {
                        correct += 1;
                    }
                }
                correct as f64 / logits.cols().max(1) as f64
            }
        };
        if !val_metric.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats { epoch, train_loss, val_metric });
        let _ = num_classes;

        let improved = match (&best, metric_kind) {
            (None, _) => true,
            (Some((cur, _, _)), MetricKind::LowerIsBetter) => val_metric < *cur,
            (Some((cur, _, _)), MetricKind::HigherIsBetter) => val_metric > *cur,
        };
        if improved {
            best = Some((
                val_metric,
                Checkpoint { model: model.clone(), w2: w2.clone(), bias: bias.clone() },
                epoch,
            ));
        }
    }

    let (_, best_ckpt, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome { history, best: best_ckpt, best_epoch, metric_kind })
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> ByteReader<'a> {
        ByteReader { bytes, pos: 0 }
    }

    fn fail(&self, message: &str) -> Error {
        Error::Parse { line: self.pos, message: message.into() }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(self.fail(&format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let s = self.take(8, what)?;
        Ok(u64::from_le_bytes(s.try_into().expect("length checked")))
    }

    fn f64_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let s = self.take(8 * count, what)?;
        Ok(s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk size")))
            .collect())
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LDRC";

fn class_tag(class: ClassName) -> u8 {
    match class {
        ClassName::Unstructured => 0,
        ClassName::LowRank => 1,
        ClassName::ToeplitzLike => 2,
        ClassName::HankelLike => 3,
        ClassName::VandermondeLike => 4,
        ClassName::LdrSd => 5,
        ClassName::LdrTd => 6,
    }
}

fn class_from_tag(tag: u8, offset: usize) -> Result<ClassName> {
    Ok(match tag {
        0 => ClassName::Unstructured,
        1 => ClassName::LowRank,
        2 => ClassName::ToeplitzLike,
        3 => ClassName::HankelLike,
        4 => ClassName::VandermondeLike,
        5 => ClassName::LdrSd,
        6 => ClassName::LdrTd,
        other => {
            return Err(Error::Parse {
                line: offset,
                message: format!("unknown class tag {other}"),
            })
        }
    })
}

impl Checkpoint {
    /// Binary layout: magic, class tag, dims, the model tensors (the
    /// representation reuses the `LdrMatrix` byte format), then the optional
    /// softmax layer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(class_tag(self.model.class()));
        push_u64(&mut out, self.model.n() as u64);
        push_u64(&mut out, self.model.rank() as u64);
        match &self.model {
            Model::Dense { w } => push_f64s(&mut out, w.as_slice()),
            Model::LowRank { u, v } => {
                push_f64s(&mut out, u.as_slice());
                push_f64s(&mut out, v.as_slice());
            }
            Model::Ldr { m, .. } => {
                let blob = m.to_bytes();
                push_u64(&mut out, blob.len() as u64);
                out.extend_from_slice(&blob);
            }
        }
        match (&self.w2, &self.bias) {
            (Some(w2), Some(bias)) => {
                out.push(1);
                push_u64(&mut out, w2.rows() as u64);
                push_f64s(&mut out, w2.as_slice());
                push_f64s(&mut out, bias);
            }
            _ => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse { line: 0, message: "bad checkpoint magic".into() });
        }
        let tag_offset = r.pos;
        let tag = r.u8("class tag")?;
        let class = class_from_tag(tag, tag_offset)?;
        let n = r.u64("dimension")? as usize;
        let rank = r.u64("rank")? as usize;
        if n == 0 || n > (1 << 24) || rank == 0 || rank > n.max(1) {
            return Err(Error::Parse { line: r.pos, message: "implausible dimensions".into() });
        }
        let model = match class {
            ClassName::Unstructured => {
                let w = r.f64_vec(n * n, "dense weights")?;
                Model::Dense { w: DenseMatrix::from_column_major(n, n, w)? }
            }
            ClassName::LowRank => {
                let u = r.f64_vec(n * rank, "low-rank U")?;
                let v = r.f64_vec(n * rank, "low-rank V")?;
                Model::LowRank {
                    u: DenseMatrix::from_column_major(n, rank, u)?,
                    v: DenseMatrix::from_column_major(n, rank, v)?,
                }
            }
            _ => {
                let blob_len = r.u64("representation length")? as usize;
                let blob = r.take(blob_len, "representation")?;
                let m = LdrMatrix::from_bytes(blob)?;
                if m.n() != n || m.rank() != rank {
                    return Err(Error::Parse {
                        line: r.pos,
                        message: "representation dims disagree with header".into(),
                    });
                }
                Model::Ldr { class, m }
            }
        };
        let has_softmax = r.u8("softmax flag")?;
        let (w2, bias) = if has_softmax == 1 {
            let classes = r.u64("class count")? as usize;
            if classes == 0 || classes > (1 << 20) {
                return Err(Error::Parse { line: r.pos, message: "implausible class count".into() });
            }
            let w2 = r.f64_vec(classes * n, "softmax weights")?;
            let bias = r.f64_vec(classes, "softmax bias")?;
            (Some(DenseMatrix::from_column_major(classes, n, w2)?), Some(bias))
        } else if has_softmax == 0 {
            (None, None)
        } else {
            return Err(Error::Parse {
                line: r.pos - 1,
                message: format!("invalid softmax flag {has_softmax}"),
            });
        };
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                line: r.pos,
                message: "trailing bytes after checkpoint".into(),
            });
        }
        Ok(Checkpoint { model, w2, bias })
    }

    /// Named tensors for text dumps, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        match &self.model {
            Model::Dense { w } => out.push(("w".to_string(), w.as_slice().to_vec())),
            Model::LowRank { u, v } => {
                out.push(("u".to_string(), u.as_slice().to_vec()));
                out.push(("v".to_string(), v.as_slice().to_vec()));
            }
            Model::Ldr { m, .. } => {
                for (prefix, op) in [("op_a", &m.op_a), ("op_b", &m.op_b)] {
                    match op {
                        Operator::Shift { f, .. } => {
                            out.push((format!("{prefix}_f"), vec![*f]));
                        }
                        Operator::Subdiagonal { sub, corner } => {
                            out.push((format!("{prefix}_sub"), sub.clone()));
                            out.push((format!("{prefix}_corner"), vec![*corner]));
                        }
                        Operator::Tridiagonal { sub, diag, sup, corner_tr, corner_bl } => {
                            out.push((format!("{prefix}_sub"), sub.clone()));
                            out.push((format!("{prefix}_diag"), diag.clone()));
                            out.push((format!("{prefix}_sup"), sup.clone()));
                            out.push((format!("{prefix}_corner_tr"), vec![*corner_tr]));
                            out.push((format!("{prefix}_corner_bl"), vec![*corner_bl]));
                        }
                        Operator::Diagonal { d } => {
                            out.push((format!("{prefix}_diag"), d.clone()));
                        }
                    }
                }
                out.push(("g".to_string(), m.g.as_slice().to_vec()));
                out.push(("h".to_string(), m.h.as_slice().to_vec()));
            }
        }
        if let Some(w2) = &self.w2 {
            out.push(("w2".to_string(), w2.as_slice().to_vec()));
        }
        if let Some(bias) = &self.bias {
            out.push(("bias".to_string(), bias.clone()));
        }
        out
    }

    /// True when the model carries structured displacement operators.
    pub fn has_structured_operators(&self) -> bool {
        matches!(self.model, Model::Ldr { .. })
    }
}
