//! Linear state-space models and the block bi-diagonal constraint system.
//!
//! A model with steps `k = 1..N` is encoded as `min ρ(z)` subject to `Az = ŵ`
//! where `z = (u₁, t₁, x₁, …, u_N, t_N, x_N)` and each step contributes the rows
//!
//! ```text
//! Qroot_k u_k + x_k − G_k x_{k−1} = offset_k        (x₀ + offset₁ for k = 1)
//! Rroot_k t_k + H_k x_k            = y_k
//! ```
//!
//! The process row follows the constrained formulation literally: `u_k` carries
//! the residual `G_k x_{k−1} − x_k`. For a symmetric process penalty the sign is
//! irrelevant; asymmetric penalties see the flipped residual.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::plq::{Penalty, PenaltyKind, SeparablePenalty};

/// Relative eigenvalue cutoff used by [`psd_root`] when none is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// One time step of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct StepModel {
    /// `G_k`; ignored for the first step, whose process row anchors on `x₀`.
    pub transition: Option<DMatrix<f64>>,
    pub h: DMatrix<f64>,
    pub qroot: DMatrix<f64>,
    pub rroot: DMatrix<f64>,
    pub y: DVector<f64>,
    pub process_offset: DVector<f64>,
}

impl StepModel {
    pub fn new(
        transition: Option<DMatrix<f64>>,
        h: DMatrix<f64>,
        qroot: DMatrix<f64>,
        rroot: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Self {
        let n = qroot.nrows();
        StepModel {
            transition,
            h,
            qroot,
            rroot,
            y,
            process_offset: DVector::zeros(n),
        }
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Self {
        self.process_offset = offset;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.qroot.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn process_cols(&self) -> usize {
        self.qroot.ncols()
    }

    pub fn meas_cols(&self) -> usize {
        self.rroot.ncols()
    }

    /// Rows `n + m_k` of this step's constraint block.
    pub fn rows(&self) -> usize {
        self.state_dim() + self.meas_dim()
    }

    /// Columns `q_k + r_k + n` of this step's slice of `z`.
    pub fn cols(&self) -> usize {
        self.process_cols() + self.meas_cols() + self.state_dim()
    }

    fn validate(&self, n: usize, first: bool) -> Result<()> {
        let bad = |what: &str, exp: String, got: String| {
            Err(Error::Model(format!("{what}: expected {exp}, got {got}")))
        };
        if self.qroot.nrows() != n {
            return bad("process root rows", n.to_string(), self.qroot.nrows().to_string());
        }
        if self.process_offset.len() != n {
            return bad("process offset length", n.to_string(), self.process_offset.len().to_string());
        }
        let m = self.h.nrows();
        if self.h.ncols() != n {
            return bad("measurement map columns", n.to_string(), self.h.ncols().to_string());
        }
        if self.rroot.nrows() != m {
            return bad("measurement root rows", m.to_string(), self.rroot.nrows().to_string());
        }
        if self.y.len() != m {
            return bad("measurement length", m.to_string(), self.y.len().to_string());
        }
        match (&self.transition, first) {
            (Some(g), _) if g.shape() != (n, n) => {
                return bad("transition shape", format!("{n}x{n}"), format!("{}x{}", g.nrows(), g.ncols()));
            }
            (None, false) => return Err(Error::Model("transition missing on a non-initial step".into())),
            _ => {}
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.h)
            || !finite(&self.qroot)
            || !finite(&self.rroot)
            || !self.y.iter().all(|v| v.is_finite())
            || !self.process_offset.iter().all(|v| v.is_finite())
            || self.transition.as_ref().is_some_and(|g| !finite(g))
        {
            return Err(Error::Model("non-finite entry in step model".into()));
        }
        if let Some(i) = self.zero_rows().first() {
            return Err(Error::Model(format!(
                "measurement row {i} has zero coefficients in both the noise root and the measurement map"
            )));
        }
        Ok(())
    }

    /// Measurement rows whose `[Rroot H]` coefficients are all zero.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.meas_dim())
            .filter(|&i| self.rroot.row(i).iter().chain(self.h.row(i).iter()).all(|v| *v == 0.0))
            .collect()
    }

    fn keep_rows(&mut self, keep: &[usize]) {
        self.h = self.h.select_rows(keep);
        self.rroot = self.rroot.select_rows(keep);
        self.y = self.y.select_rows(keep);
    }
}

/// Penalties on the `u`, `t` and `x` slices of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPenalties {
    pub process: SeparablePenalty,
    pub measurement: SeparablePenalty,
    pub state: SeparablePenalty,
}

impl StepPenalties {
    /// One penalty per slice, applied uniformly across it.
    pub fn uniform(step: &StepModel, process: &Penalty, measurement: &Penalty, state: &Penalty) -> Result<Self> {
        Ok(StepPenalties {
            process: SeparablePenalty::uniform(step.process_cols(), process.clone())?,
            measurement: SeparablePenalty::uniform(step.meas_cols(), measurement.clone())?,
            state: SeparablePenalty::uniform(step.state_dim(), state.clone())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingProblem {
    pub x0: DVector<f64>,
    pub steps: Vec<StepModel>,
    pub penalties: Vec<StepPenalties>,
}

impl SmoothingProblem {
    pub fn new(x0: DVector<f64>, steps: Vec<StepModel>, penalties: Vec<StepPenalties>) -> Result<Self> {
        let p = SmoothingProblem { x0, steps, penalties };
        p.validate()?;
        Ok(p)
    }

    /// Same penalty triple on every step.
    pub fn with_uniform_penalties(
        x0: DVector<f64>,
        steps: Vec<StepModel>,
        process: &Penalty,
        measurement: &Penalty,
        state: &Penalty,
    ) -> Result<Self> {
        let penalties = steps
            .iter()
            .map(|s| StepPenalties::uniform(s, process, measurement, state))
            .collect::<Result<Vec<_>>>()?;
        Self::new(x0, steps, penalties)
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Model("model has no steps".into()));
        }
        if self.penalties.len() != self.steps.len() {
            return Err(Error::Model(format!(
                "{} steps but {} penalty assignments",
                self.steps.len(),
                self.penalties.len()
            )));
        }
        let n = self.state_dim();
        if n == 0 {
            return Err(Error::Model("state dimension is zero".into()));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::Model("non-finite initial state".into()));
        }
        for (k, (s, pen)) in self.steps.iter().zip(&self.penalties).enumerate() {
            s.validate(n, k == 0)
                .map_err(|e| Error::Model(format!("step {}: {e}", k + 1)))?;
            for (name, got, want) in [
                ("process", pen.process.len(), s.process_cols()),
                ("measurement", pen.measurement.len(), s.meas_cols()),
                ("state", pen.state.len(), s.state_dim()),
            ] {
                if got != want {
                    return Err(Error::Model(format!(
                        "step {}: {name} penalty covers {got} coordinates, block has {want}",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Removes measurement rows with all-zero `[Rroot H]` coefficients, which
    /// would otherwise make `A` rank deficient. Returns `(step, row)` pairs of
    /// the removed rows, 0-based, in original numbering.
    ///
    /// Measurement penalties are indexed by noise columns and are left as-is.
    pub fn drop_zero_measurement_rows(&mut self) -> Vec<(usize, usize)> {
        let mut dropped = Vec::new();
        for (k, s) in self.steps.iter_mut().enumerate() {
            let zero = s.zero_rows();
            if zero.is_empty() {
                continue;
            }
            let keep: Vec<usize> = (0..s.meas_dim()).filter(|i| !zero.contains(i)).collect();
            s.keep_rows(&keep);
            dropped.extend(zero.into_iter().map(|i| (k, i)));
        }
        dropped
    }

    /// Offsets of each step's slice within `z`.
    pub fn layout(&self) -> Layout {
        Layout::new(&self.steps)
    }

    /// Builds `z = (0, 0, x₁, …, 0, 0, x_N)` from a state trajectory.
    pub fn z_from_states(&self, states: &[DVector<f64>]) -> Result<DVector<f64>> {
        let layout = self.layout();
        if states.len() != self.len() {
            return Err(Error::dim("state trajectory", self.len(), states.len()));
        }
        let mut z = DVector::zeros(layout.total_cols());
        for (k, x) in states.iter().enumerate() {
            if x.len() != self.state_dim() {
                return Err(Error::dim("state vector", self.state_dim(), x.len()));
            }
            z.rows_mut(layout.state_offset(k), x.len()).copy_from(x);
        }
        Ok(z)
    }

    /// Full covariance `Q_k = Qroot Qrootᵀ`.
    pub fn process_cov(&self, k: usize) -> DMatrix<f64> {
        let q = &self.steps[k].qroot;
        q * q.transpose()
    }

    pub fn meas_cov(&self, k: usize) -> DMatrix<f64> {
        let r = &self.steps[k].rroot;
        r * r.transpose()
    }
}

/// Re-expresses the states in new units, `x = diag(units)·x̃`. The minimizer
/// over physical trajectories is unchanged, but first-order solvers are not
/// invariant to this choice. State penalties must be zero.
pub fn rescale_states(p: &SmoothingProblem, units: &[f64]) -> Result<SmoothingProblem> {
    p.validate()?;
    let n = p.state_dim();
    if units.len() != n {
        return Err(Error::dim("state units", n, units.len()));
    }
    if let Some(u) = units.iter().find(|u| !(**u > 0.0 && u.is_finite())) {
        return Err(Error::Argument(format!("state units must be positive, got {u}")));
    }
    for (k, pen) in p.penalties.iter().enumerate() {
        let zero = pen
            .state
            .blocks()
            .iter()
            .all(|b| matches!(b.penalty.kind(), PenaltyKind::Zero) && b.penalty.added_quadratic() == 0.0);
        if !zero {
            return Err(Error::Argument(format!("step {}: rescaling needs zero state penalties", k + 1)));
        }
    }
    let d = DVector::from_column_slice(units);
    let dinv = d.map(|v| 1.0 / v);
    let mut out = p.clone();
    out.x0 = p.x0.component_mul(&dinv);
    for s in &mut out.steps {
        if let Some(g) = s.transition.as_mut() {
            for j in 0..n {
                for i in 0..n {
                    g[(i, j)] *= d[j] * dinv[i];
                }
            }
        }
        for i in 0..n {
            s.qroot.row_mut(i).scale_mut(dinv[i]);
            s.process_offset[i] *= dinv[i];
        }
        for j in 0..n {
            s.h.column_mut(j).scale_mut(d[j]);
        }
    }
    Ok(out)
}

/// Multiplies every state slice of `z` by `units`, undoing [`rescale_states`].
pub fn restore_state_units(layout: &Layout, units: &[f64], z: &mut [f64]) {
    for k in 0..layout.steps() {
        let o = layout.state_offset(k);
        for (v, u) in z[o..o + units.len()].iter_mut().zip(units) {
            *v *= u;
        }
    }
}

/// Column offsets of `(u_k, t_k, x_k)` in `z` and row offsets of each step in `ŵ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    col: Vec<usize>,
    row: Vec<usize>,
    q: Vec<usize>,
    r: Vec<usize>,
    n: usize,
}

impl Layout {
    fn new(steps: &[StepModel]) -> Self {
        let mut col = vec![0];
        let mut row = vec![0];
        for s in steps {
            col.push(col.last().unwrap() + s.cols());
            row.push(row.last().unwrap() + s.rows());
        }
        Layout {
            col,
            row,
            q: steps.iter().map(|s| s.process_cols()).collect(),
            r: steps.iter().map(|s| s.meas_cols()).collect(),
            n: steps.first().map_or(0, |s| s.state_dim()),
        }
    }

    pub fn steps(&self) -> usize {
        self.q.len()
    }

    pub fn total_cols(&self) -> usize {
        *self.col.last().unwrap()
    }

    pub fn total_rows(&self) -> usize {
        *self.row.last().unwrap()
    }

    pub fn col_offset(&self, k: usize) -> usize {
        self.col[k]
    }

    pub fn row_offset(&self, k: usize) -> usize {
        self.row[k]
    }

    pub fn cols(&self, k: usize) -> usize {
        self.col[k + 1] - self.col[k]
    }

    pub fn rows(&self, k: usize) -> usize {
        self.row[k + 1] - self.row[k]
    }

    pub fn process_offset(&self, k: usize) -> usize {
        self.col[k]
    }

    pub fn process_len(&self, k: usize) -> usize {
        self.q[k]
    }

    pub fn meas_offset(&self, k: usize) -> usize {
        self.col[k] + self.q[k]
    }

    pub fn meas_len(&self, k: usize) -> usize {
        self.r[k]
    }

    pub fn state_offset(&self, k: usize) -> usize {
        self.col[k] + self.q[k] + self.r[k]
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// The `x_k` slice of `z`.
    pub fn state<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let o = self.state_offset(k);
        &z[o..o + self.n]
    }

    /// All `x_k` slices as vectors.
    pub fn states(&self, z: &[f64]) -> Vec<DVector<f64>> {
        (0..self.steps())
            .map(|k| DVector::from_column_slice(self.state(z, k)))
            .collect()
    }
}

/// The constraint matrix `A`: diagonal blocks `D_k` and sub-diagonal blocks
/// `B_k` coupling row block `k + 1` to column block `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBidiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub sub: Vec<DMatrix<f64>>,
    pub layout: Layout,
}

impl BlockBidiagonal {
    pub fn nrows(&self) -> usize {
        self.layout.total_rows()
    }

    pub fn ncols(&self) -> usize {
        self.layout.total_cols()
    }

    pub fn apply(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.ncols() {
            return Err(Error::dim("constraint matvec", self.ncols(), z.len()));
        }
        let mut out = vec![0.0; self.nrows()];
        self.apply_into(z, &mut out);
        Ok(DVector::from_vec(out))
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.nrows() {
            return Err(Error::dim("constraint transpose matvec", self.nrows(), v.len()));
        }
        let mut out = vec![0.0; self.ncols()];
        self.apply_transpose_into(v, &mut out);
        Ok(DVector::from_vec(out))
    }

    /// `out = A z`; lengths are assumed correct.
    pub(crate) fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        for k in 0..self.diag.len() {
            let (ro, rn) = (l.row_offset(k), l.rows(k));
            let dst = &mut out[ro..ro + rn];
            gemv(dst, &self.diag[k], &z[l.col_offset(k)..][..l.cols(k)], false, false);
            if k > 0 {
                gemv(dst, &self.sub[k - 1], &z[l.col_offset(k - 1)..][..l.cols(k - 1)], false, true);
            }
        }
    }

    /// `out = Aᵀ v`; lengths are assumed correct.
    pub(crate) fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let last = self.diag.len() - 1;
        for k in 0..=last {
            let (co, cn) = (l.col_offset(k), l.cols(k));
            let dst = &mut out[co..co + cn];
            gemv(dst, &self.diag[k], &v[l.row_offset(k)..][..l.rows(k)], true, false);
            if k < last {
                gemv(dst, &self.sub[k], &v[l.row_offset(k + 1)..][..l.rows(k + 1)], true, true);
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let mut a = DMatrix::zeros(self.nrows(), self.ncols());
        for (k, d) in self.diag.iter().enumerate() {
            a.view_mut((l.row_offset(k), l.col_offset(k)), d.shape()).copy_from(d);
        }
        for (k, b) in self.sub.iter().enumerate() {
            a.view_mut((l.row_offset(k + 1), l.col_offset(k)), b.shape()).copy_from(b);
        }
        a
    }
}

/// `dst (+)= M x` or `Mᵀ x`, accumulating when `acc` is set.
pub(crate) fn gemv(dst: &mut [f64], m: &DMatrix<f64>, x: &[f64], transpose: bool, acc: bool) {
    let (r, c) = m.shape();
    let data = m.as_slice();
    if !acc {
        dst.iter_mut().for_each(|v| *v = 0.0);
    }
    if transpose {
        for j in 0..c {
            let col = &data[j * r..(j + 1) * r];
            dst[j] += col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    } else {
        for (j, &xj) in x.iter().enumerate().take(c) {
            if xj == 0.0 {
                continue;
            }
            let col = &data[j * r..(j + 1) * r];
            for (d, a) in dst.iter_mut().zip(col) {
                *d += a * xj;
            }
        }
    }
}

/// The assembled constraint system together with its penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub a: BlockBidiagonal,
    pub w: DVector<f64>,
    pub penalty: SeparablePenalty,
}

impl Assembled {
    pub fn layout(&self) -> &Layout {
        &self.a.layout
    }
}

pub fn assemble(p: &SmoothingProblem) -> Result<Assembled> {
    p.validate()?;
    let layout = p.layout();
    let n = p.state_dim();
    let mut diag = Vec::with_capacity(p.len());
    let mut sub = Vec::with_capacity(p.len().saturating_sub(1));
    let mut w = DVector::zeros(layout.total_rows());
    let mut penalty = SeparablePenalty::new();

    for (k, s) in p.steps.iter().enumerate() {
        let (q, r, m) = (s.process_cols(), s.meas_cols(), s.meas_dim());
        let mut d = DMatrix::zeros(n + m, q + r + n);
        d.view_mut((0, 0), (n, q)).copy_from(&s.qroot);
        d.view_mut((0, q + r), (n, n)).fill_with_identity();
        d.view_mut((n, q), (m, r)).copy_from(&s.rroot);
        d.view_mut((n, q + r), (m, n)).copy_from(&s.h);
        diag.push(d);

        if k > 0 {
            let prev = &p.steps[k - 1];
            let g = s.transition.as_ref().expect("validated");
            let mut b = DMatrix::zeros(n + m, prev.cols());
            b.view_mut((0, prev.process_cols() + prev.meas_cols()), (n, n))
                .copy_from(&(-g));
            sub.push(b);
        }

        let ro = layout.row_offset(k);
        let mut top = s.process_offset.clone();
        if k == 0 {
            top += &p.x0;
        }
        w.rows_mut(ro, n).copy_from(&top);
        w.rows_mut(ro + n, m).copy_from(&s.y);

        let pen = &p.penalties[k];
        penalty.extend(&pen.process)?;
        penalty.extend(&pen.measurement)?;
        penalty.extend(&pen.state)?;
    }
    Ok(Assembled {
        a: BlockBidiagonal { diag, sub, layout },
        w,
        penalty,
    })
}

/// Symmetric PSD square root `W` with `WWᵀ = Q` and one column per eigenvalue
/// above `rank_tol` (default `DEFAULT_RANK_TOL × λ_max`).
///
/// Columns follow descending eigenvalue order; each column's largest-magnitude
/// entry is made positive so the result is deterministic.
pub fn psd_root(q: &DMatrix<f64>, rank_tol: Option<f64>) -> Result<DMatrix<f64>> {
    if !q.is_square() {
        return Err(Error::Model(format!("covariance must be square, got {}x{}", q.nrows(), q.ncols())));
    }
    let n = q.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::Model("covariance has non-finite entries".into()));
    }
    let scale = q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = (q - q.transpose()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::Model(format!("covariance is not symmetric (max asymmetry {asym:e})")));
    }
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let tol = rank_tol.unwrap_or(DEFAULT_RANK_TOL * lmax).max(0.0);
    let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if lmin < -tol.max(1e-14 * lmax.max(scale)) {
        return Err(Error::Model(format!("covariance is indefinite (eigenvalue {lmin:e})")));
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > tol).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut w = DMatrix::zeros(n, order.len());
    for (j, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v = -v;
        }
        w.set_column(j, &(v * eig.eigenvalues[i].sqrt()));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSurjectivity {
    /// 1-based step index.
    pub step: usize,
    pub meas_rows: usize,
    /// Smallest singular value of `R + H(I − (Q + I)⁻¹)Hᵀ`; absent when the
    /// step has no measurement rows.
    pub min_singular_value: Option<f64>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurjectivityReport {
    pub steps: Vec<StepSurjectivity>,
    pub surjective: bool,
}

impl SurjectivityReport {
    pub fn failing_steps(&self) -> impl Iterator<Item = &StepSurjectivity> {
        self.steps.iter().filter(|s| !s.ok)
    }
}

/// Relative threshold on the smallest singular value of the per-step test matrix.
pub const SURJECTIVITY_TOL: f64 = 1e-10;

/// Per-step test that `A` has full row rank: each step's block
/// `R + H(I − (Q + I)⁻¹)Hᵀ` must be nonsingular.
pub fn check_surjectivity(p: &SmoothingProblem) -> SurjectivityReport {
    let steps: Vec<StepSurjectivity> = p
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let m = s.meas_dim();
            if m == 0 {
                return StepSurjectivity {
                    step: k + 1,
                    meas_rows: 0,
                    min_singular_value: None,
                    ok: true,
                };
            }
            let n = s.state_dim();
            let q = &s.qroot * s.qroot.transpose();
            let r = &s.rroot * s.rroot.transpose();
            let eye = DMatrix::<f64>::identity(n, n);
            // I − (Q + I)⁻¹ = Q(Q + I)⁻¹, which is symmetric PSD
            let inv = (q.clone() + &eye)
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| eye.clone());
            let middle = &eye - inv;
            let mat = r + &s.h * middle * s.h.transpose();
            let sv = mat.singular_values();
            let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let smax = sv.iter().copied().fold(0.0, f64::max);
            StepSurjectivity {
                step: k + 1,
                meas_rows: m,
                min_singular_value: Some(smin),
                ok: smin > SURJECTIVITY_TOL * smax.max(1.0),
            }
        })
        .collect();
    let surjective = steps.iter().all(|s| s.ok);
    SurjectivityReport { steps, surjective }
}
