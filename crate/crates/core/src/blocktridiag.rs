//! Block tridiagonal normal matrices `AAᵀ`, their block bi-diagonal Cholesky
//! factors, and the affine projection onto `{z : Az = ŵ}`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::statespace::{Assembled, BlockBidiagonal};

/// Pivots below this fraction of the largest diagonal entry count as zero.
pub const PIVOT_TOL: f64 = 1e-13;

/// Symmetric block tridiagonal matrix; `sub[k]` is the block at `(k + 1, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub sub: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.iter().map(|d| d.nrows()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        dense_from_blocks(&self.diag, &self.sub, true)
    }
}

fn dense_from_blocks(diag: &[DMatrix<f64>], sub: &[DMatrix<f64>], symmetric: bool) -> DMatrix<f64> {
    let n: usize = diag.iter().map(|d| d.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for (k, d) in diag.iter().enumerate() {
        let r = d.nrows();
        out.view_mut((off, off), (r, r)).copy_from(d);
        if k > 0 {
            let b = &sub[k - 1];
            let prev = diag[k - 1].nrows();
            out.view_mut((off, off - prev), b.shape()).copy_from(b);
            if symmetric {
                out.view_mut((off - prev, off), (prev, r)).copy_from(&b.transpose());
            }
        }
        off += r;
    }
    out
}

/// `AAᵀ` formed blockwise: `a_k = D_k D_kᵀ + B_{k−1} B_{k−1}ᵀ`, `b_k = B_k D_kᵀ`.
pub fn normal_matrix(a: &BlockBidiagonal) -> BlockTridiagonal {
    let diag = a
        .diag
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let mut m = d * d.transpose();
            if k > 0 {
                let b = &a.sub[k - 1];
                m += b * b.transpose();
            }
            m
        })
        .collect();
    let sub = a.sub.iter().zip(&a.diag).map(|(b, d)| b * d.transpose()).collect();
    BlockTridiagonal { diag, sub }
}

thread_local! {
    static FACTOR_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`factor`] calls made on the current thread.
pub fn factor_calls() -> usize {
    FACTOR_CALLS.with(|c| c.get())
}

/// Lower block bi-diagonal `L` with `LLᵀ = T`: lower-triangular `diag[k]` and
/// `sub[k]` at block position `(k + 1, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriCholesky {
    pub diag: Vec<DMatrix<f64>>,
    pub sub: Vec<DMatrix<f64>>,
    offsets: Vec<usize>,
}

/// Block Cholesky recursion `s_k = a_k − d_{k−1} d_{k−1}ᵀ`, `c_k = chol(s_k)`,
/// `d_k = b_k c_k⁻ᵀ`.
///
/// A non-positive or negligible pivot means `A` is not surjective; the error
/// names the 1-based step.
pub fn factor(t: &BlockTridiagonal) -> Result<BlockTriCholesky> {
    FACTOR_CALLS.with(|c| c.set(c.get() + 1));
    if t.sub.len() + 1 != t.diag.len() && !(t.diag.is_empty() && t.sub.is_empty()) {
        return Err(Error::dim("block tridiagonal sub-diagonal count", t.diag.len().saturating_sub(1), t.sub.len()));
    }
    let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(t.diag.len());
    let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(t.sub.len());
    let mut offsets = vec![0];
    for (k, a) in t.diag.iter().enumerate() {
        let mut s = a.clone();
        if k > 0 {
            let d: &DMatrix<f64> = &sub[k - 1];
            s -= d * d.transpose();
        }
        s = (&s + s.transpose()) * 0.5;
        let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let c = s
            .cholesky()
            .map(|c| c.unpack())
            .filter(|c| c.diagonal().iter().all(|l| l * l > PIVOT_TOL * scale))
            .ok_or(Error::NotSurjective { step: k + 1 })?;
        if k + 1 < t.diag.len() {
            let b = &t.sub[k];
            let dt = c
                .solve_lower_triangular(&b.transpose())
                .ok_or(Error::NotSurjective { step: k + 1 })?;
            sub.push(dt.transpose());
        }
        offsets.push(offsets.last().unwrap() + c.nrows());
        diag.push(c);
    }
    Ok(BlockTriCholesky { diag, sub, offsets })
}

/// In-place `L y = b` for column-major lower-triangular `l`.
fn lower_solve(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        x[j] /= col[j];
        let xj = x[j];
        for i in j + 1..n {
            x[i] -= col[i] * xj;
        }
    }
}

/// In-place `Lᵀ y = b` for column-major lower-triangular `l`.
fn upper_solve_transposed(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for j in (0..n).rev() {
        let col = &data[j * n..(j + 1) * n];
        let s: f64 = (j + 1..n).map(|i| col[i] * x[i]).sum();
        x[j] = (x[j] - s) / col[j];
    }
}

impl BlockTriCholesky {
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        dense_from_blocks(&self.diag, &self.sub, false)
    }

    /// Solves `LLᵀ ν = rhs` by forward then backward block substitution.
    pub fn solve(&self, rhs: &[f64]) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::dim("normal equation right-hand side", self.dim(), rhs.len()));
        }
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(DVector::from_vec(x))
    }

    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        let nb = self.diag.len();
        for k in 0..nb {
            let (o, e) = (self.offsets[k], self.offsets[k + 1]);
            if k > 0 {
                let (head, tail) = x.split_at_mut(o);
                let prev = &head[self.offsets[k - 1]..];
                let cur = &mut tail[..e - o];
                sub_gemv(cur, &self.sub[k - 1], prev, false);
            }
            lower_solve(&self.diag[k], &mut x[o..e]);
        }
        for k in (0..nb).rev() {
            let (o, e) = (self.offsets[k], self.offsets[k + 1]);
            if k + 1 < nb {
                let (head, tail) = x.split_at_mut(e);
                let next = &tail[..self.offsets[k + 2] - e];
                sub_gemv(&mut head[o..], &self.sub[k], next, true);
            }
            upper_solve_transposed(&self.diag[k], &mut x[o..e]);
        }
    }
}

/// `dst −= M x` (or `Mᵀ x`).
fn sub_gemv(dst: &mut [f64], m: &DMatrix<f64>, x: &[f64], transpose: bool) {
    let (r, c) = m.shape();
    let data = m.as_slice();
    if transpose {
        for (j, d) in dst.iter_mut().enumerate().take(c) {
            let col = &data[j * r..(j + 1) * r];
            *d -= col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    } else {
        for (j, &xj) in x.iter().enumerate().take(c) {
            let col = &data[j * r..(j + 1) * r];
            for (d, a) in dst.iter_mut().zip(col) {
                *d -= a * xj;
            }
        }
    }
}

/// Euclidean projection onto `{z : Az = ŵ}` with `AAᵀ` factored once.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    a: BlockBidiagonal,
    chol: BlockTriCholesky,
    w: DVector<f64>,
}

impl AffineProjector {
    pub fn new(a: BlockBidiagonal, w: DVector<f64>) -> Result<Self> {
        if w.len() != a.nrows() {
            return Err(Error::dim("constraint right-hand side", a.nrows(), w.len()));
        }
        let chol = factor(&normal_matrix(&a))?;
        Ok(AffineProjector { a, chol, w })
    }

    pub fn from_assembled(asm: &Assembled) -> Result<Self> {
        Self::new(asm.a.clone(), asm.w.clone())
    }

    pub fn constraint(&self) -> &BlockBidiagonal {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn cholesky(&self) -> &BlockTriCholesky {
        &self.chol
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    /// `z = η − Aᵀν` with `AAᵀν = Aη − ŵ`.
    pub fn project(&self, eta: &[f64]) -> Result<DVector<f64>> {
        if eta.len() != self.ncols() {
            return Err(Error::dim("projection input", self.ncols(), eta.len()));
        }
        let mut out = vec![0.0; eta.len()];
        let mut rows = vec![0.0; self.nrows()];
        self.project_into(eta, &mut out, &mut rows);
        Ok(DVector::from_vec(out))
    }

    pub(crate) fn project_into(&self, eta: &[f64], out: &mut [f64], rows: &mut [f64]) {
        self.a.apply_into(eta, rows);
        for (r, w) in rows.iter_mut().zip(self.w.iter()) {
            *r -= w;
        }
        self.chol.solve_in_place(rows);
        self.a.apply_transpose_into(rows, out);
        for (o, e) in out.iter_mut().zip(eta) {
            *o = e - *o;
        }
    }

    /// Component of `v` orthogonal to `Range(Aᵀ)`, i.e. `v − Aᵀ(AAᵀ)⁻¹Av`.
    pub fn null_component(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::dim("null-space component input", self.ncols(), v.len()));
        }
        let mut rows = vec![0.0; self.nrows()];
        self.a.apply_into(v, &mut rows);
        self.chol.solve_in_place(&mut rows);
        let mut out = vec![0.0; v.len()];
        self.a.apply_transpose_into(&rows, &mut out);
        Ok(DVector::from_iterator(v.len(), v.iter().zip(&out).map(|(a, b)| a - b)))
    }

    /// `‖Az − ŵ‖∞`.
    pub fn infeasibility(&self, z: &[f64]) -> Result<f64> {
        let r = self.a.apply(z)? - &self.w;
        Ok(r.amax())
    }

    pub(crate) fn infeasibility_with(&self, z: &[f64], rows: &mut [f64]) -> f64 {
        self.a.apply_into(z, rows);
        rows.iter()
            .zip(self.w.iter())
            .fold(0.0, |m, (r, w)| f64::max(m, (r - w).abs()))
    }
}

#[cfg(test)]
mod tests;
