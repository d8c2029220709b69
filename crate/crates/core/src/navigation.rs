//! Kinematic navigation model: position, velocity and acceleration in three
//! axes driven by rank-deficient process noise, with world-frame
//! accelerometer rows and sparse position fixes.
//!
//! State layout is `(x, y, z, ẋ, ẏ, ż, ẍ, ÿ, z̈)`, optionally followed by
//! constant accelerometer biases.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::blocktridiag::AffineProjector;
use crate::error::{Error, Result};
use crate::plq::{Penalty, SeparablePenalty};
use crate::statespace::{psd_root, SmoothingProblem, StepModel, StepPenalties};

pub const STATE_DIM: usize = 9;
pub const POSITION: usize = 0;
pub const VELOCITY: usize = 3;
pub const ACCELERATION: usize = 6;

/// Roll, pitch and heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub heading: f64,
}

/// Body-to-world rotation `R_hᵀ R_pᵀ R_rᵀ`.
pub fn rotation_matrix(att: &Attitude) -> Matrix3<f64> {
    let (sh, ch) = att.heading.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    let (sr, cr) = att.roll.sin_cos();
    let rh = Matrix3::new(ch, sh, 0.0, -sh, ch, 0.0, 0.0, 0.0, 1.0);
    let rp = Matrix3::new(cp, 0.0, -sp, 0.0, 1.0, 0.0, sp, 0.0, cp);
    let rr = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, sr, 0.0, -sr, cr);
    rh.transpose() * rp.transpose() * rr.transpose()
}

/// Exact transition over `dt`; the continuous generator is nilpotent so the
/// exponential series stops at the quadratic term.
pub fn discretize_transition(dt: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(STATE_DIM, STATE_DIM);
    for i in 0..3 {
        f[(POSITION + i, VELOCITY + i)] = dt;
        f[(VELOCITY + i, ACCELERATION + i)] = dt;
        f[(POSITION + i, ACCELERATION + i)] = 0.5 * dt * dt;
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Rank-3 noise shaped like the next Taylor term, `ΓᵀΓ` with
    /// `Γ = [T³/6·I, T²/2·I, T·I]`.
    #[default]
    TaylorRemainder,
    /// White noise on velocity integrated over the step. Acceleration gets no
    /// noise, so it is frozen at its initial value.
    ClassicQderiv,
}

/// Process noise root and covariance for one step of length `dt`.
pub fn process_cov(dt: f64, q_scale: f64, mode: CovarianceMode) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("step length must be positive, got {dt}")));
    }
    if !(q_scale > 0.0 && q_scale.is_finite()) {
        return Err(Error::Argument(format!("q_scale must be positive, got {q_scale}")));
    }
    match mode {
        CovarianceMode::TaylorRemainder => {
            let coef = [dt.powi(3) / 6.0, dt * dt / 2.0, dt];
            let s = q_scale.sqrt();
            let mut root = DMatrix::zeros(STATE_DIM, 3);
            for (b, c) in coef.iter().enumerate() {
                for i in 0..3 {
                    root[(3 * b + i, i)] = s * c;
                }
            }
            let q = &root * root.transpose();
            Ok((root, q))
        }
        CovarianceMode::ClassicQderiv => {
            let coef = [[dt.powi(3) / 3.0, dt * dt / 2.0, 0.0], [dt * dt / 2.0, dt, 0.0], [0.0; 3]];
            let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
            for (a, row) in coef.iter().enumerate() {
                for (b, c) in row.iter().enumerate() {
                    for i in 0..3 {
                        q[(3 * a + i, 3 * b + i)] = q_scale * c;
                    }
                }
            }
            let root = psd_root(&q, None)?;
            Ok((root, q))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub accel_body: [f64; 3],
    pub attitude: Attitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub t: f64,
    pub xyz: [f64; 3],
    pub sd: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavConfig {
    /// Nominal sample spacing, used for fix alignment and for the first step.
    pub dt: f64,
    pub q_scale: f64,
    /// Accelerometer noise variance in (m/s²)².
    pub r_accel: f64,
    /// Half-width of the acceleration deadzone in m/s².
    pub deadzone_eps: f64,
    /// Huber threshold of the default acceleration penalty, in noise units.
    pub accel_kappa: f64,
    pub bias_axes: Vec<Axis>,
    pub covariance_mode: CovarianceMode,
    pub process_penalty: Penalty,
    /// Defaults to a Huberized Vapnik with the deadzone scaled into noise units.
    pub accel_penalty: Option<Penalty>,
    pub position_penalty: Penalty,
    /// Standard deviations (position, velocity, acceleration) of an optional
    /// Gaussian spread around `x₀` on the first step.
    pub initial_sd: Option<[f64; 3]>,
    /// Units in which the solver sees position, velocity and acceleration.
    /// They leave the minimizer unchanged but govern the convergence speed
    /// of the splitting iteration; biases use the acceleration unit.
    pub state_units: [f64; 3],
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            dt: 0.04,
            q_scale: 1e-2,
            r_accel: 1e-4,
            deadzone_eps: 0.05,
            accel_kappa: 1.345,
            bias_axes: Vec::new(),
            covariance_mode: CovarianceMode::TaylorRemainder,
            process_penalty: Penalty::quadratic(0.5).expect("valid weight"),
            accel_penalty: None,
            position_penalty: Penalty::quadratic(0.5).expect("valid weight"),
            initial_sd: None,
            state_units: [100.0, 10.0, 1.0],
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dt", self.dt), ("q_scale", self.q_scale), ("r_accel", self.r_accel)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.deadzone_eps >= 0.0 && self.deadzone_eps.is_finite()) {
            return Err(Error::Argument(format!("deadzone_eps must be nonnegative, got {}", self.deadzone_eps)));
        }
        if !(self.accel_kappa > 0.0 && self.accel_kappa.is_finite()) {
            return Err(Error::Argument(format!("accel_kappa must be positive, got {}", self.accel_kappa)));
        }
        if let Some(sd) = self.initial_sd {
            if sd.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Argument(format!("initial_sd entries must be positive, got {sd:?}")));
            }
        }
        if self.state_units.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Argument(format!("state_units must be positive, got {:?}", self.state_units)));
        }
        Ok(())
    }

    /// Penalty on the three acceleration noise coordinates of each step.
    pub fn accel_penalty(&self) -> Result<Penalty> {
        match &self.accel_penalty {
            Some(p) => Ok(p.clone()),
            None => Penalty::huberized_vapnik(self.deadzone_eps / self.r_accel.sqrt(), self.accel_kappa, 1.0),
        }
    }
}

/// A navigation smoothing problem together with its time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct NavProblem {
    pub problem: SmoothingProblem,
    pub times: Vec<f64>,
    /// Index into the fix list for each step that carries a fix.
    pub fix_at: Vec<Option<usize>>,
    pub bias_axes: Vec<Axis>,
    pub state_units: [f64; 3],
}

impl NavProblem {
    /// Per-coordinate solver units for the full state, biases included.
    pub fn units(&self) -> Vec<f64> {
        (0..self.problem.state_dim())
            .map(|i| self.state_units[(i / 3).min(2)])
            .collect()
    }

    pub fn has_fix(&self, k: usize) -> bool {
        self.fix_at[k].is_some()
    }

    /// Offset of the first acceleration row within step `k`'s measurements.
    pub fn accel_row(&self, k: usize) -> usize {
        if self.has_fix(k) {
            3
        } else {
            0
        }
    }

    pub fn bias_offset(&self) -> usize {
        STATE_DIM
    }
}

fn check_imu(imu: &[ImuSample]) -> Result<()> {
    if imu.is_empty() {
        return Err(Error::Data("IMU stream is empty".into()));
    }
    for (i, s) in imu.iter().enumerate() {
        let att = [s.attitude.roll, s.attitude.pitch, s.attitude.heading];
        if !s.t.is_finite() || s.accel_body.iter().chain(&att).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("IMU sample {} at t={} has a non-finite field", i + 1, s.t)));
        }
        if i > 0 && !(s.t > imu[i - 1].t) {
            return Err(Error::Data(format!(
                "IMU timestamps must increase strictly: t={} follows t={}",
                s.t,
                imu[i - 1].t
            )));
        }
    }
    Ok(())
}

fn check_fixes(fixes: &[PositionFix]) -> Result<()> {
    for (i, f) in fixes.iter().enumerate() {
        if !f.t.is_finite() || f.xyz.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("fix {} at t={} has a non-finite field", i + 1, f.t)));
        }
        if f.sd.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Data(format!("fix at t={} has non-positive sd {:?}", f.t, f.sd)));
        }
        if i > 0 && !(f.t > fixes[i - 1].t) {
            return Err(Error::Data(format!("fix timestamps must increase strictly: t={} follows t={}", f.t, fixes[i - 1].t)));
        }
    }
    Ok(())
}

/// Maps each fix onto the nearest IMU step, which must lie within `dt/2`.
fn align_fixes(imu: &[ImuSample], fixes: &[PositionFix], dt: f64) -> Result<Vec<Option<usize>>> {
    let mut fix_at = vec![None; imu.len()];
    for (i, f) in fixes.iter().enumerate() {
        let pos = imu.partition_point(|s| s.t < f.t);
        let nearest = [pos.checked_sub(1), (pos < imu.len()).then_some(pos)]
            .into_iter()
            .flatten()
            .min_by(|a, b| (imu[*a].t - f.t).abs().total_cmp(&(imu[*b].t - f.t).abs()))
            .expect("imu is nonempty");
        if (imu[nearest].t - f.t).abs() > 0.5 * dt {
            return Err(Error::Data(format!("fix at t={} is not within dt/2 of any IMU sample", f.t)));
        }
        if let Some(prev) = fix_at[nearest] {
            let prev: usize = prev;
            return Err(Error::Data(format!(
                "fixes at t={} and t={} align to the same IMU sample",
                fixes[prev].t, f.t
            )));
        }
        fix_at[nearest] = Some(i);
    }
    Ok(fix_at)
}

/// Prior state from the fixes: the first fix's position, the slope between
/// the first two fixes as velocity, zero acceleration.
pub fn initial_state(fixes: &[PositionFix]) -> DVector<f64> {
    let mut x = DVector::zeros(STATE_DIM);
    if let Some(f) = fixes.first() {
        for i in 0..3 {
            x[POSITION + i] = f.xyz[i];
        }
    }
    if let [a, b, ..] = fixes {
        let span = b.t - a.t;
        if span > 0.0 {
            for i in 0..3 {
                x[VELOCITY + i] = (b.xyz[i] - a.xyz[i]) / span;
            }
        }
    }
    x
}

/// One step per IMU sample. Steps carrying a fix get three position rows
/// ahead of the three acceleration rows. The prior `x₀` comes from
/// [`initial_state`].
pub fn build_problem(imu: &[ImuSample], fixes: &[PositionFix], cfg: &NavConfig) -> Result<NavProblem> {
    cfg.validate()?;
    check_imu(imu)?;
    check_fixes(fixes)?;
    let fix_at = align_fixes(imu, fixes, cfg.dt)?;
    let accel_pen = cfg.accel_penalty()?;
    let rs = cfg.r_accel.sqrt();

    let mut steps = Vec::with_capacity(imu.len());
    let mut penalties = Vec::with_capacity(imu.len());
    for (k, s) in imu.iter().enumerate() {
        let dt = if k == 0 { cfg.dt } else { s.t - imu[k - 1].t };
        let (mut qroot, _) = process_cov(dt, cfg.q_scale, cfg.covariance_mode)?;
        let mut process = SeparablePenalty::uniform(qroot.ncols(), cfg.process_penalty.clone())?;
        if k == 0 {
            if let Some(sd) = cfg.initial_sd {
                let spread = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| if i == j { sd[i / 3] } else { 0.0 });
                qroot = concat_cols(&qroot, &spread);
                process.push(STATE_DIM, Penalty::quadratic(0.5)?)?;
            }
        }

        let nfix = if fix_at[k].is_some() { 3 } else { 0 };
        let m = nfix + 3;
        let mut h = DMatrix::zeros(m, STATE_DIM);
        let mut rroot = DMatrix::zeros(m, m);
        let mut y = DVector::zeros(m);
        let mut measurement = SeparablePenalty::new();
        if let Some(i) = fix_at[k] {
            let f = &fixes[i];
            for a in 0..3 {
                h[(a, POSITION + a)] = 1.0;
                rroot[(a, a)] = f.sd[a];
                y[a] = f.xyz[a];
            }
            measurement.push(3, cfg.position_penalty.clone())?;
        }
        let world = rotation_matrix(&s.attitude) * nalgebra::Vector3::from(s.accel_body);
        for a in 0..3 {
            h[(nfix + a, ACCELERATION + a)] = 1.0;
            rroot[(nfix + a, nfix + a)] = rs;
            y[nfix + a] = world[a];
        }
        measurement.push(3, accel_pen.clone())?;

        let transition = (k > 0).then(|| discretize_transition(dt));
        let step = StepModel::new(transition, h, qroot, rroot, y);
        penalties.push(StepPenalties {
            process,
            measurement,
            state: SeparablePenalty::uniform(STATE_DIM, Penalty::zero())?,
        });
        steps.push(step);
    }
    let problem = SmoothingProblem::new(initial_state(fixes), steps, penalties)?;
    Ok(NavProblem {
        problem,
        times: imu.iter().map(|s| s.t).collect(),
        fix_at,
        bias_axes: Vec::new(),
        state_units: cfg.state_units,
    })
}

fn concat_cols(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn pad_rows(a: &DMatrix<f64>, extra: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + extra, a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out
}

/// Appends one constant bias state per axis. Bias rows of the transition are
/// identity with no process noise, except on the first step where each bias
/// gets an unpenalized noise column so its level is free. Acceleration rows
/// read `ẍ + b`.
pub fn augment_bias(nav: NavProblem, axes: &[Axis]) -> Result<NavProblem> {
    let mut axes = axes.to_vec();
    axes.sort();
    axes.dedup();
    if axes.is_empty() {
        return Err(Error::Argument("bias augmentation needs at least one axis".into()));
    }
    if !nav.bias_axes.is_empty() {
        return Err(Error::Argument("problem already carries bias states".into()));
    }
    let nb = axes.len();
    let n = STATE_DIM + nb;
    let NavProblem {
        problem,
        times,
        fix_at,
        state_units,
        ..
    } = nav;
    let SmoothingProblem { x0, steps, penalties } = problem;
    if x0.len() != STATE_DIM {
        return Err(Error::dim("navigation state", STATE_DIM, x0.len()));
    }

    let mut new_steps = Vec::with_capacity(steps.len());
    let mut new_pens = Vec::with_capacity(steps.len());
    for (k, (s, mut pen)) in steps.into_iter().zip(penalties).enumerate() {
        let transition = s.transition.as_ref().map(|g| {
            let mut big = DMatrix::identity(n, n);
            big.view_mut((0, 0), (STATE_DIM, STATE_DIM)).copy_from(g);
            big
        });
        let mut qroot = pad_rows(&s.qroot, nb);
        if k == 0 {
            let mut free = DMatrix::zeros(n, nb);
            for j in 0..nb {
                free[(STATE_DIM + j, j)] = 1.0;
            }
            qroot = concat_cols(&qroot, &free);
            pen.process.push(nb, Penalty::zero())?;
        }
        let mut h = DMatrix::zeros(s.meas_dim(), n);
        h.columns_mut(0, STATE_DIM).copy_from(&s.h);
        let first_accel = if fix_at[k].is_some() { 3 } else { 0 };
        for (j, ax) in axes.iter().enumerate() {
            h[(first_accel + ax.index(), STATE_DIM + j)] = 1.0;
        }
        pen.state = SeparablePenalty::uniform(n, Penalty::zero())?;
        let offset = DVector::from_fn(n, |i, _| if i < STATE_DIM { s.process_offset[i] } else { 0.0 });
        new_steps.push(StepModel::new(transition, h, qroot, s.rroot, s.y).with_offset(offset));
        new_pens.push(pen);
    }
    let x0 = DVector::from_fn(n, |i, _| if i < STATE_DIM { x0[i] } else { 0.0 });
    Ok(NavProblem {
        problem: SmoothingProblem::new(x0, new_steps, new_pens)?,
        times,
        fix_at,
        bias_axes: axes,
        state_units,
    })
}

/// States obtained by running the transitions forward from `start` with no
/// noise.
pub fn propagate(p: &SmoothingProblem, start: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if start.len() != p.state_dim() {
        return Err(Error::dim("propagation start", p.state_dim(), start.len()));
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(p.len());
    for (k, s) in p.steps.iter().enumerate() {
        let x = match (k, &s.transition) {
            (0, _) => start.clone(),
            (_, Some(g)) => g * &out[k - 1] + &s.process_offset,
            (_, None) => return Err(Error::Model(format!("step {} has no transition", k + 1))),
        };
        out.push(x);
    }
    Ok(out)
}

/// Starting point for the solver: [`initial_state`] propagated through the
/// model with zero noise variables, then projected onto the constraints.
/// Extra state coordinates beyond the kinematic nine start at zero.
///
/// `p` and `proj` may be in rescaled units; `units` converts the physical
/// start into them.
pub fn initialize_by_propagation(
    p: &SmoothingProblem,
    fixes: &[PositionFix],
    proj: &AffineProjector,
    units: &[f64],
) -> Result<Vec<f64>> {
    let base = initial_state(fixes);
    let n = p.state_dim();
    if n < STATE_DIM {
        return Err(Error::dim("navigation state", STATE_DIM, n));
    }
    if units.len() != n {
        return Err(Error::dim("state units", n, units.len()));
    }
    let start = DVector::from_fn(n, |i, _| if i < STATE_DIM { base[i] / units[i] } else { 0.0 });
    let states = propagate(p, &start)?;
    let z = p.z_from_states(&states)?;
    Ok(proj.project(z.as_slice())?.data.into())
}

#[cfg(test)]
mod tests;
