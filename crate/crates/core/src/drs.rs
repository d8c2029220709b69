//! Primal-dual Douglas-Rachford splitting for `min ρ(z) s.t. Az = ŵ`:
//!
//! ```text
//! zᵏ = proj_{Az=ŵ}(zᵏ⁻¹ − τ ζᵏ⁻¹)
//! ζᵏ = prox_{σρ*}(ζᵏ⁻¹ + σ(2zᵏ − zᵏ⁻¹))
//! ```

use serde::{Deserialize, Serialize};

use crate::blocktridiag::AffineProjector;
use crate::error::{Error, Result};
use crate::plq::SeparablePenalty;

/// Slack used when deciding whether a coordinate sits on a kink of its
/// penalty during certification.
pub const CERT_KINK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrsParams {
    pub tau: f64,
    pub sigma: f64,
    pub max_iter: usize,
    /// Stop once `‖ηᵏ − ηᵏ⁻¹‖ / max(1, ‖ηᵏ‖)` falls below this. Zero disables.
    pub tol_change: f64,
    pub tol_feas: f64,
    pub record_history: bool,
}

impl Default for DrsParams {
    fn default() -> Self {
        DrsParams {
            tau: 0.9,
            sigma: 0.9,
            max_iter: 500,
            tol_change: 1e-9,
            tol_feas: 1e-9,
            record_history: true,
        }
    }
}

impl DrsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("sigma", self.sigma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Argument(format!("{name} must lie strictly between 0 and 1, got {v}")));
            }
        }
        for (name, v) in [("tol_change", self.tol_change), ("tol_feas", self.tol_feas)] {
            if !(v >= 0.0) {
                return Err(Error::Argument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub step: f64,
}

/// KKT residuals of `min ρ(z) s.t. Az = ŵ` at a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalityReport {
    /// `‖Az − ŵ‖∞`
    pub feas: f64,
    /// `‖ζ − P_{Range(Aᵀ)} ζ‖ / max(1, ‖ζ‖)`
    pub range_resid: f64,
    /// Largest blockwise distance from `ζ` to `∂ρ(z)`.
    pub subgrad_resid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    pub certificate: OptimalityReport,
    pub status: Status,
}

/// Feasible start `(proj(0), 0)`.
pub fn default_start(proj: &AffineProjector) -> (Vec<f64>, Vec<f64>) {
    let n = proj.ncols();
    let z = proj.project(&vec![0.0; n]).expect("dimension matches").data.into();
    (z, vec![0.0; n])
}

pub fn solve(
    proj: &AffineProjector,
    penalty: &SeparablePenalty,
    params: &DrsParams,
    z0: &[f64],
    zeta0: &[f64],
) -> Result<Solution> {
    solve_with_observer(proj, penalty, params, z0, zeta0, |_, _, _| {})
}

/// Like [`solve`], calling `observer(k, zᵏ, ζᵏ)` after every iteration.
pub fn solve_with_observer(
    proj: &AffineProjector,
    penalty: &SeparablePenalty,
    params: &DrsParams,
    z0: &[f64],
    zeta0: &[f64],
    mut observer: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Solution> {
    params.validate()?;
    let n = proj.ncols();
    if penalty.len() != n {
        return Err(Error::dim("penalty length", n, penalty.len()));
    }
    if z0.len() != n {
        return Err(Error::dim("initial primal iterate", n, z0.len()));
    }
    if zeta0.len() != n {
        return Err(Error::dim("initial dual iterate", n, zeta0.len()));
    }
    let (tau, sigma) = (params.tau, params.sigma);

    let mut z = z0.to_vec();
    let mut zeta = zeta0.to_vec();
    let mut z_new = vec![0.0; n];
    let mut zeta_new = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut rows = vec![0.0; proj.nrows()];
    let mut history = Vec::new();
    let mut status = Status::MaxIter;
    let mut iterations = 0;

    for k in 1..=params.max_iter {
        for i in 0..n {
            buf[i] = z[i] - tau * zeta[i];
        }
        proj.project_into(&buf, &mut z_new, &mut rows);
        for i in 0..n {
            buf[i] = zeta[i] + sigma * (2.0 * z_new[i] - z[i]);
        }
        penalty.prox_conjugate_into(sigma, &buf, &mut zeta_new, &mut scratch);

        let mut step2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..n {
            step2 += (z_new[i] - z[i]).powi(2) + (zeta_new[i] - zeta[i]).powi(2);
            norm2 += z_new[i].powi(2) + zeta_new[i].powi(2);
        }
        std::mem::swap(&mut z, &mut z_new);
        std::mem::swap(&mut zeta, &mut zeta_new);
        let step = step2.sqrt();
        if !step.is_finite() || !norm2.is_finite() {
            return Err(Error::NonFinite { iteration: k });
        }
        let feas = proj.infeasibility_with(&z, &mut rows);
        iterations = k;
        if params.record_history {
            history.push(HistoryEntry {
                iter: k,
                objective: penalty.eval(&z).expect("length checked"),
                feasibility: feas,
                step,
            });
        }
        observer(k, &z, &zeta);
        if params.tol_change > 0.0 && step / norm2.sqrt().max(1.0) < params.tol_change && feas < params.tol_feas {
            status = Status::Converged;
            break;
        }
    }
    let certificate = certify(proj, penalty, &z, &zeta)?;
    Ok(Solution {
        z,
        zeta,
        iterations,
        history,
        certificate,
        status,
    })
}

/// KKT residuals at `(z, ζ)`: feasibility, `ζ ∈ Range(Aᵀ)`, and `ζ ∈ ∂ρ(z)`.
pub fn certify(proj: &AffineProjector, penalty: &SeparablePenalty, z: &[f64], zeta: &[f64]) -> Result<OptimalityReport> {
    let feas = proj.infeasibility(z)?;
    let null = proj.null_component(zeta)?;
    let zn = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let range_resid = null.norm() / zn.max(1.0);
    let subgrad_resid = penalty.subgradient_distance(z, zeta, CERT_KINK_TOL)?;
    Ok(OptimalityReport {
        feas,
        range_resid,
        subgrad_resid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Fitted per-iteration contraction factor.
    pub kappa: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// First index from which every successive ratio stays within 20% of `kappa`.
    pub onset: Option<usize>,
    /// Entries used after trimming the round-off floor.
    pub samples: usize,
    pub diverging: bool,
}

/// Minimum number of usable distances for [`estimate_rate`].
pub const MIN_RATE_SAMPLES: usize = 50;

/// Fits `log dₖ ≈ a + k log κ` over the last third of `distances`, where
/// `dₖ = ‖ηᵏ − η*‖`.
///
/// The sequence is cut at the first entry that is non-finite, non-positive,
/// or below `1e-13 × max d`, since the remainder is round-off.
pub fn estimate_rate(distances: &[f64]) -> Result<RateEstimate> {
    let peak = distances.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
    let floor = 1e-13 * peak;
    let usable = distances
        .iter()
        .position(|d| !d.is_finite() || *d <= floor)
        .unwrap_or(distances.len());
    let d = &distances[..usable];
    if d.len() < MIN_RATE_SAMPLES {
        return Err(Error::Argument(format!(
            "rate estimation needs at least {MIN_RATE_SAMPLES} usable distances, got {}",
            d.len()
        )));
    }
    let start = d.len() - d.len() / 3;
    let xs: Vec<f64> = (start..d.len()).map(|k| k as f64).collect();
    let ys: Vec<f64> = d[start..].iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let kappa = slope.exp();

    let within = |k: usize| ((d[k + 1] / d[k]) / kappa - 1.0).abs() <= 0.2;
    let mut onset = None;
    for k in (0..d.len() - 1).rev() {
        if within(k) {
            onset = Some(k);
        } else {
            break;
        }
    }
    Ok(RateEstimate {
        kappa,
        r_squared,
        onset,
        samples: d.len(),
        diverging: kappa >= 1.0,
    })
}

/// Local-rate diagnostic for a run: a reference solve three times longer
/// supplies `η*`, then the run is repeated recording `‖ηᵏ − η*‖`.
pub fn rate_diagnostic(
    proj: &AffineProjector,
    penalty: &SeparablePenalty,
    params: &DrsParams,
    z0: &[f64],
    zeta0: &[f64],
) -> Result<RateEstimate> {
    let reference_params = DrsParams {
        max_iter: params.max_iter.saturating_mul(3),
        tol_change: 0.0,
        record_history: false,
        ..params.clone()
    };
    let star = solve(proj, penalty, &reference_params, z0, zeta0)?;
    let run_params = DrsParams {
        tol_change: 0.0,
        record_history: false,
        ..params.clone()
    };
    let mut distances = Vec::with_capacity(params.max_iter);
    solve_with_observer(proj, penalty, &run_params, z0, zeta0, |_, z, zeta| {
        let d2: f64 = z
            .iter()
            .zip(&star.z)
            .chain(zeta.iter().zip(&star.zeta))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        distances.push(d2.sqrt());
    })?;
    estimate_rate(&distances)
}
