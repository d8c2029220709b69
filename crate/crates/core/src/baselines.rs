//! Reference solvers for Gaussian models: a covariance-form RTS smoother and a
//! dense KKT solve of the constrained problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plq::SeparablePenalty;
use crate::statespace::{Assembled, SmoothingProblem};

/// Relative eigenvalue cutoff for symmetric pseudo-inverses.
pub const PINV_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSolution {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Pseudo-inverse of a symmetric PSD matrix via its eigendecomposition.
pub fn symmetric_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = PINV_TOL * lmax;
    let inv = eig.eigenvalues.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Noise covariance implied by quadratic penalties on the noise coordinates:
/// `root · diag(1/h) · rootᵀ` where `h` is the penalty Hessian diagonal.
fn implied_cov(root: &DMatrix<f64>, pen: &SeparablePenalty, what: &str, step: usize) -> Result<DMatrix<f64>> {
    let h = pen.quadratic_diagonal().ok_or_else(|| {
        Error::Oracle(format!("step {step}: {what} penalty is not quadratic"))
    })?;
    if let Some(v) = h.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Oracle(format!(
            "step {step}: {what} penalty has curvature {v}; a Gaussian reading needs positive weights"
        )));
    }
    let scaled = DMatrix::from_fn(root.nrows(), root.ncols(), |i, j| root[(i, j)] / h[j]);
    Ok(&scaled * root.transpose())
}

/// Forward Kalman filter and backward RTS pass in covariance form.
///
/// The process and measurement penalties must be quadratic and the state
/// penalty zero. `x₁` has prior mean `x₀ + offset₁` and covariance `prior_cov`.
/// Innovation and predicted covariances are inverted with [`symmetric_pinv`],
/// so singular noise is handled without inverting `Q` or `R`.
pub fn rts_smooth(p: &SmoothingProblem, prior_cov: &DMatrix<f64>) -> Result<GaussianSolution> {
    p.validate()?;
    let n = p.state_dim();
    if prior_cov.shape() != (n, n) {
        return Err(Error::dim("prior covariance", n, prior_cov.nrows()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut filt_m = Vec::with_capacity(p.len());
    let mut filt_p = Vec::with_capacity(p.len());
    let mut pred_m = Vec::with_capacity(p.len());
    let mut pred_p = Vec::with_capacity(p.len());

    for (k, (s, pen)) in p.steps.iter().zip(&p.penalties).enumerate() {
        let step = k + 1;
        match pen.state.quadratic_diagonal() {
            Some(h) if h.iter().all(|v| *v == 0.0) => {}
            _ => return Err(Error::Oracle(format!("step {step}: state penalty must be zero"))),
        }
        let q = implied_cov(&s.qroot, &pen.process, "process", step)?;
        let r = implied_cov(&s.rroot, &pen.measurement, "measurement", step)?;

        let (m, pm) = if k == 0 {
            (&p.x0 + &s.process_offset, prior_cov.clone())
        } else {
            let g = s.transition.as_ref().expect("validated");
            (g * &filt_m[k - 1] + &s.process_offset, g * &filt_p[k - 1] * g.transpose() + q)
        };
        let h = &s.h;
        let innov_cov = h * &pm * h.transpose() + &r;
        let gain = &pm * h.transpose() * symmetric_pinv(&innov_cov);
        let mf = &m + &gain * (&s.y - h * &m);
        let ikh = &eye - &gain * h;
        let pf = &ikh * &pm * ikh.transpose() + &gain * r * gain.transpose();
        pred_m.push(m);
        pred_p.push(pm);
        filt_m.push(mf);
        filt_p.push((&pf + pf.transpose()) * 0.5);
    }

    let nsteps = p.len();
    let mut means = filt_m.clone();
    let mut covs = filt_p.clone();
    for k in (0..nsteps.saturating_sub(1)).rev() {
        let g = p.steps[k + 1].transition.as_ref().expect("validated");
        let c = &filt_p[k] * g.transpose() * symmetric_pinv(&pred_p[k + 1]);
        means[k] = &filt_m[k] + &c * (&means[k + 1] - &pred_m[k + 1]);
        let pk = &filt_p[k] + &c * (&covs[k + 1] - &pred_p[k + 1]) * c.transpose();
        covs[k] = (&pk + pk.transpose()) * 0.5;
    }
    Ok(GaussianSolution { means, covs })
}

/// Prior covariance for `x₁` implied by step 1's process penalty, matching
/// the constrained formulation's treatment of `x₀` as data.
pub fn default_prior_cov(p: &SmoothingProblem) -> Result<DMatrix<f64>> {
    implied_cov(&p.steps[0].qroot, &p.penalties[0].process, "process", 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMapSolution {
    pub z: DVector<f64>,
    /// Multiplier with `Wz + Aᵀν = 0`.
    pub nu: DVector<f64>,
    /// Penalty gradient `Wz`, the dual iterate at the optimum.
    pub zeta: DVector<f64>,
}

/// Solves `min ½ zᵀWz s.t. Az = ŵ` through the dense KKT system
/// `[[W, Aᵀ], [A, 0]]`, where `W` is the Hessian diagonal of a purely
/// quadratic separable penalty.
pub fn dense_map_solve(asm: &Assembled) -> Result<DenseMapSolution> {
    let w = asm
        .penalty
        .quadratic_diagonal()
        .ok_or_else(|| Error::Oracle("dense MAP solve needs purely quadratic penalties".into()))?;
    let a = asm.a.to_dense();
    let (m, n) = a.shape();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    for (i, v) in w.iter().enumerate() {
        kkt[(i, i)] = *v;
    }
    kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(&asm.w);

    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Oracle("KKT matrix is singular (LU pivot vanished)".into()))?;
    let z = sol.rows(0, n).clone_owned();
    let nu = sol.rows(n, m).clone_owned();
    let zeta = DVector::from_iterator(n, z.iter().zip(&w).map(|(a, b)| a * b));

    let scale = 1.0 + asm.w.amax() + z.amax();
    let stationarity = (&zeta + a.transpose() * &nu).amax();
    let feasibility = (&a * &z - &asm.w).amax();
    if !(stationarity <= 1e-9 * scale) {
        return Err(Error::Oracle(format!(
            "KKT stationarity residual {stationarity:e} too large; the system is numerically singular"
        )));
    }
    if !(feasibility <= 1e-9 * scale) {
        return Err(Error::Oracle(format!(
            "KKT feasibility residual {feasibility:e} too large; the system is numerically singular"
        )));
    }
    Ok(DenseMapSolution { z, nu, zeta })
}
