//! Piecewise linear-quadratic penalties and indicators with exact proximity
//! operators.
//!
//! Every penalty is a closed proper convex function with a closed-form prox.
//! Conjugate proxes are never evaluated from the conjugate itself; they go
//! through the Moreau decomposition
//! `prox_{σρ*}(z) = z − σ·prox_{ρ/σ}(z/σ)`.
//!
//! Scaling conventions (all weights `w > 0`):
//!
//! | kind               | value                                         |
//! |--------------------|-----------------------------------------------|
//! | `Quadratic`        | `w‖x‖²`                                       |
//! | `L1`               | `w‖x‖₁`                                       |
//! | `L2Norm`           | `w‖x‖₂`                                       |
//! | `LinfNorm`         | `w‖x‖∞`                                       |
//! | `Huber`            | `w Σ h_κ(xᵢ)`, `h_κ` = `½x²` / `κ(|x| − ½κ)`   |
//! | `Vapnik`           | `w Σ max(|xᵢ| − ε, 0)`                        |
//! | `HuberizedVapnik`  | `w Σ h_κ(max(|xᵢ| − ε, 0))`                   |
//! | `Hinge`            | `w Σ max(xᵢ, 0)`                              |
//! | `AffineQuadratic`  | `½‖Mx − b‖²`                                  |
//!
//! A [`Penalty`] may additionally be replaced by its Moreau envelope `e_α f`
//! and/or receive an added `(γ_q/2)‖x‖²` term; the value is
//! `e_α f(x) + (γ_q/2)‖x‖²` with the envelope applied first.

mod project;
mod separable;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use project::{project_simplex_family, SimplexFamily};
pub use separable::{PenaltyBlock, SeparablePenalty};

use project::{min_hinged_quadratic, proj_capped_simplex, proj_l1_ball, proj_simplex};

/// Slack allowed when testing membership of a point in an indicator's set.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyKind {
    Zero,
    Quadratic { weight: f64 },
    L1 { weight: f64 },
    L2Norm { weight: f64 },
    LinfNorm { weight: f64 },
    Huber { kappa: f64, weight: f64 },
    Vapnik { eps: f64, weight: f64 },
    HuberizedVapnik { eps: f64, kappa: f64, weight: f64 },
    Hinge { weight: f64 },
    BoxIndicator { lower: Vec<f64>, upper: Vec<f64> },
    NonnegIndicator,
    Ball2Indicator { radius: f64 },
    BallInfIndicator { radius: f64 },
    Ball1Indicator { radius: f64 },
    SimplexIndicator { scale: f64 },
    /// `{0 ≤ x ≤ 1, Σx = total}`
    CappedSimplexIndicator { total: f64 },
    AffineQuadratic { map: DMatrix<f64>, offset: DVector<f64> },
}

impl PenaltyKind {
    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            PenaltyKind::BoxIndicator { .. }
                | PenaltyKind::NonnegIndicator
                | PenaltyKind::Ball2Indicator { .. }
                | PenaltyKind::BallInfIndicator { .. }
                | PenaltyKind::Ball1Indicator { .. }
                | PenaltyKind::SimplexIndicator { .. }
                | PenaltyKind::CappedSimplexIndicator { .. }
        )
    }

    /// Dimension fixed by the kind's parameters, if any.
    pub fn declared_dim(&self) -> Option<usize> {
        match self {
            PenaltyKind::BoxIndicator { lower, .. } => Some(lower.len()),
            PenaltyKind::AffineQuadratic { map, .. } => Some(map.ncols()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Zero => "zero",
            PenaltyKind::Quadratic { .. } => "quadratic",
            PenaltyKind::L1 { .. } => "l1",
            PenaltyKind::L2Norm { .. } => "l2_norm",
            PenaltyKind::LinfNorm { .. } => "linf_norm",
            PenaltyKind::Huber { .. } => "huber",
            PenaltyKind::Vapnik { .. } => "vapnik",
            PenaltyKind::HuberizedVapnik { .. } => "huberized_vapnik",
            PenaltyKind::Hinge { .. } => "hinge",
            PenaltyKind::BoxIndicator { .. } => "box",
            PenaltyKind::NonnegIndicator => "nonneg",
            PenaltyKind::Ball2Indicator { .. } => "ball2",
            PenaltyKind::BallInfIndicator { .. } => "ball_inf",
            PenaltyKind::Ball1Indicator { .. } => "ball1",
            PenaltyKind::SimplexIndicator { .. } => "simplex",
            PenaltyKind::CappedSimplexIndicator { .. } => "capped_simplex",
            PenaltyKind::AffineQuadratic { .. } => "affine_quadratic",
        }
    }
}

/// A PLQ penalty with optional envelope smoothing and added quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    kind: PenaltyKind,
    add_quadratic: f64,
    envelope: Option<f64>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Argument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Argument(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

impl Penalty {
    /// Validates the kind's parameters and wraps it without modifiers.
    pub fn new(kind: PenaltyKind) -> Result<Self> {
        match &kind {
            PenaltyKind::Zero | PenaltyKind::NonnegIndicator => {}
            PenaltyKind::Quadratic { weight }
            | PenaltyKind::L1 { weight }
            | PenaltyKind::L2Norm { weight }
            | PenaltyKind::LinfNorm { weight }
            | PenaltyKind::Hinge { weight } => {
                positive("weight", *weight)?;
            }
            PenaltyKind::Huber { kappa, weight } => {
                positive("kappa", *kappa)?;
                positive("weight", *weight)?;
            }
            PenaltyKind::Vapnik { eps, weight } => {
                nonneg("eps", *eps)?;
                positive("weight", *weight)?;
            }
            PenaltyKind::HuberizedVapnik { eps, kappa, weight } => {
                nonneg("eps", *eps)?;
                positive("kappa", *kappa)?;
                positive("weight", *weight)?;
            }
            PenaltyKind::BoxIndicator { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::dim("box bounds", lower.len(), upper.len()));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return Err(Error::Argument(format!("invalid box bounds [{l}, {u}]")));
                    }
                }
            }
            PenaltyKind::Ball2Indicator { radius }
            | PenaltyKind::BallInfIndicator { radius }
            | PenaltyKind::Ball1Indicator { radius } => {
                positive("radius", *radius)?;
            }
            PenaltyKind::SimplexIndicator { scale } => {
                positive("scale", *scale)?;
            }
            PenaltyKind::CappedSimplexIndicator { total } => {
                nonneg("total", *total)?;
            }
            PenaltyKind::AffineQuadratic { map, offset } => {
                if map.nrows() != offset.len() {
                    return Err(Error::dim("affine quadratic offset", map.nrows(), offset.len()));
                }
                if map.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Argument("affine quadratic data must be finite".into()));
                }
            }
        }
        Ok(Penalty {
            kind,
            add_quadratic: 0.0,
            envelope: None,
        })
    }

    pub fn zero() -> Self {
        Penalty {
            kind: PenaltyKind::Zero,
            add_quadratic: 0.0,
            envelope: None,
        }
    }

    pub fn quadratic(weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::Quadratic { weight })
    }

    pub fn l1(weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1 { weight })
    }

    pub fn l2_norm(weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::L2Norm { weight })
    }

    pub fn linf_norm(weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::LinfNorm { weight })
    }

    pub fn huber(kappa: f64, weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::Huber { kappa, weight })
    }

    pub fn vapnik(eps: f64, weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::Vapnik { eps, weight })
    }

    pub fn huberized_vapnik(eps: f64, kappa: f64, weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::HuberizedVapnik { eps, kappa, weight })
    }

    pub fn hinge(weight: f64) -> Result<Self> {
        Self::new(PenaltyKind::Hinge { weight })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(PenaltyKind::BoxIndicator { lower, upper })
    }

    pub fn nonneg() -> Self {
        Penalty {
            kind: PenaltyKind::NonnegIndicator,
            add_quadratic: 0.0,
            envelope: None,
        }
    }

    pub fn ball2(radius: f64) -> Result<Self> {
        Self::new(PenaltyKind::Ball2Indicator { radius })
    }

    pub fn ball_inf(radius: f64) -> Result<Self> {
        Self::new(PenaltyKind::BallInfIndicator { radius })
    }

    pub fn ball1(radius: f64) -> Result<Self> {
        Self::new(PenaltyKind::Ball1Indicator { radius })
    }

    pub fn simplex(scale: f64) -> Result<Self> {
        Self::new(PenaltyKind::SimplexIndicator { scale })
    }

    pub fn capped_simplex(total: f64) -> Result<Self> {
        Self::new(PenaltyKind::CappedSimplexIndicator { total })
    }

    pub fn affine_quadratic(map: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        Self::new(PenaltyKind::AffineQuadratic { map, offset })
    }

    /// Adds `(γ_q/2)‖x‖²` to the penalty.
    pub fn with_added_quadratic(mut self, gamma_q: f64) -> Result<Self> {
        self.add_quadratic = nonneg("add_quadratic", gamma_q)?;
        Ok(self)
    }

    /// Replaces the base penalty `f` by its Moreau envelope
    /// `e_α f(x) = min_y f(y) + ‖x − y‖²/(2α)`.
    pub fn with_envelope(mut self, alpha: f64) -> Result<Self> {
        self.envelope = Some(positive("envelope", alpha)?);
        Ok(self)
    }

    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn added_quadratic(&self) -> f64 {
        self.add_quadratic
    }

    pub fn envelope(&self) -> Option<f64> {
        self.envelope
    }

    pub fn declared_dim(&self) -> Option<usize> {
        self.kind.declared_dim()
    }

    /// Whether the value can be `+∞` (an indicator not smoothed by an envelope).
    pub fn is_extended(&self) -> bool {
        self.kind.is_indicator() && self.envelope.is_none()
    }

    /// Per-coordinate Hessian diagonal when the penalty is a separable
    /// quadratic `½ Σ hᵢxᵢ²`; `None` otherwise.
    pub fn quadratic_diagonal(&self) -> Option<f64> {
        if self.envelope.is_some() {
            return None;
        }
        let base = match self.kind {
            PenaltyKind::Zero => 0.0,
            PenaltyKind::Quadratic { weight } => 2.0 * weight,
            _ => return None,
        };
        Some(base + self.add_quadratic)
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        match (&self.kind, self.declared_dim()) {
            (_, Some(d)) if d != len => Err(Error::dim("penalty dimension", d, len)),
            (PenaltyKind::SimplexIndicator { .. }, _) if len == 0 => {
                Err(Error::Argument("simplex indicator on an empty block".into()))
            }
            (PenaltyKind::CappedSimplexIndicator { total }, _) if *total > len as f64 => Err(Error::Argument(
                format!("capped simplex total {total} exceeds block length {len}"),
            )),
            _ => Ok(()),
        }
    }

    /// `ρ(x)`, `+∞` outside an indicator's set.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let base = match self.envelope {
            Some(alpha) => {
                let mut p = vec![0.0; x.len()];
                base_prox(&self.kind, alpha, x, &mut p);
                let d2: f64 = x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
                base_eval(&self.kind, &p) + d2 / (2.0 * alpha)
            }
            None => base_eval(&self.kind, x),
        };
        if self.add_quadratic > 0.0 {
            base + 0.5 * self.add_quadratic * sq_norm(x)
        } else {
            base
        }
    }

    /// `prox_{γρ}(z) = argmin_x ‖x − z‖²/(2γ) + ρ(x)`.
    pub fn prox(&self, gamma: f64, z: &[f64]) -> Result<Vec<f64>> {
        positive("gamma", gamma)?;
        self.check_dim(z.len())?;
        let mut out = vec![0.0; z.len()];
        self.prox_into(gamma, z, &mut out);
        Ok(out)
    }

    /// `prox_{σρ*}(z)` via the Moreau decomposition.
    pub fn prox_conjugate(&self, sigma: f64, z: &[f64]) -> Result<Vec<f64>> {
        positive("sigma", sigma)?;
        self.check_dim(z.len())?;
        let mut out = vec![0.0; z.len()];
        let mut scratch = vec![0.0; z.len()];
        self.prox_conjugate_into(sigma, z, &mut out, &mut scratch);
        Ok(out)
    }

    pub(crate) fn prox_into(&self, gamma: f64, z: &[f64], out: &mut [f64]) {
        // prox_{γ(f + q/2‖·‖²)}(z) = prox_{γ/(1+γq) f}(z/(1+γq))
        let (g, shrink) = if self.add_quadratic > 0.0 {
            let s = 1.0 + gamma * self.add_quadratic;
            (gamma / s, 1.0 / s)
        } else {
            (gamma, 1.0)
        };
        match self.envelope {
            None => {
                if shrink == 1.0 {
                    base_prox(&self.kind, g, z, out);
                } else {
                    let zs: Vec<f64> = z.iter().map(|v| v * shrink).collect();
                    base_prox(&self.kind, g, &zs, out);
                }
            }
            Some(alpha) => {
                // prox_{g e_α f}(z) = α/(g+α) z + g/(g+α) prox_{(g+α) f}(z)
                let zs: Vec<f64> = z.iter().map(|v| v * shrink).collect();
                base_prox(&self.kind, g + alpha, &zs, out);
                let (a, b) = (alpha / (g + alpha), g / (g + alpha));
                for (o, v) in out.iter_mut().zip(&zs) {
                    *o = a * v + b * *o;
                }
            }
        }
    }

    pub(crate) fn prox_conjugate_into(&self, sigma: f64, z: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for (s, v) in scratch.iter_mut().zip(z) {
            *s = v / sigma;
        }
        self.prox_into(1.0 / sigma, scratch, out);
        for (o, v) in out.iter_mut().zip(z) {
            *o = v - sigma * *o;
        }
    }

    /// Euclidean distance from `g` to the subdifferential `∂ρ(x)`.
    ///
    /// Kinks and set boundaries within `tol` of `x` count as active, so the
    /// subdifferential used is that of the `tol`-neighbourhood of `x`.
    /// Returns `+∞` when `x` lies outside an indicator's set by more than `tol`.
    pub fn subgradient_distance(&self, x: &[f64], g: &[f64], tol: f64) -> Result<f64> {
        self.check_dim(x.len())?;
        if x.len() != g.len() {
            return Err(Error::dim("subgradient", x.len(), g.len()));
        }
        Ok(self.subgradient_distance_unchecked(x, g, tol))
    }

    pub(crate) fn subgradient_distance_unchecked(&self, x: &[f64], g: &[f64], tol: f64) -> f64 {
        let shifted: Vec<f64>;
        let g = if self.add_quadratic > 0.0 {
            shifted = g.iter().zip(x).map(|(gi, xi)| gi - self.add_quadratic * xi).collect();
            &shifted[..]
        } else {
            g
        };
        match self.envelope {
            Some(alpha) => {
                // e_α f is differentiable with gradient (x − prox_{αf}(x))/α
                let mut p = vec![0.0; x.len()];
                base_prox(&self.kind, alpha, x, &mut p);
                x.iter()
                    .zip(&p)
                    .zip(g)
                    .map(|((xi, pi), gi)| (gi - (xi - pi) / alpha).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
            None => base_subgradient_distance(&self.kind, x, g, tol),
        }
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn huber_scalar(kappa: f64, r: f64) -> f64 {
    let a = r.abs();
    if a <= kappa {
        0.5 * r * r
    } else {
        kappa * (a - 0.5 * kappa)
    }
}

fn indicator(inside: bool) -> f64 {
    if inside {
        0.0
    } else {
        f64::INFINITY
    }
}

fn base_eval(kind: &PenaltyKind, x: &[f64]) -> f64 {
    let tol = FEASIBILITY_TOL;
    match kind {
        PenaltyKind::Zero => 0.0,
        PenaltyKind::Quadratic { weight } => weight * sq_norm(x),
        PenaltyKind::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
        PenaltyKind::L2Norm { weight } => weight * sq_norm(x).sqrt(),
        PenaltyKind::LinfNorm { weight } => weight * x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        PenaltyKind::Huber { kappa, weight } => weight * x.iter().map(|&v| huber_scalar(*kappa, v)).sum::<f64>(),
        PenaltyKind::Vapnik { eps, weight } => weight * x.iter().map(|v| (v.abs() - eps).max(0.0)).sum::<f64>(),
        PenaltyKind::HuberizedVapnik { eps, kappa, weight } => {
            weight
                * x.iter()
                    .map(|v| huber_scalar(*kappa, (v.abs() - eps).max(0.0)))
                    .sum::<f64>()
        }
        PenaltyKind::Hinge { weight } => weight * x.iter().map(|v| v.max(0.0)).sum::<f64>(),
        PenaltyKind::BoxIndicator { lower, upper } => indicator(
            x.iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol * (1.0 + l.abs()) && *v <= u + tol * (1.0 + u.abs())),
        ),
        PenaltyKind::NonnegIndicator => indicator(x.iter().all(|v| *v >= -tol)),
        PenaltyKind::Ball2Indicator { radius } => indicator(sq_norm(x).sqrt() <= radius * (1.0 + tol)),
        PenaltyKind::BallInfIndicator { radius } => indicator(x.iter().all(|v| v.abs() <= radius * (1.0 + tol))),
        PenaltyKind::Ball1Indicator { radius } => {
            indicator(x.iter().map(|v| v.abs()).sum::<f64>() <= radius * (1.0 + tol))
        }
        PenaltyKind::SimplexIndicator { scale } => {
            let s: f64 = x.iter().sum();
            indicator(x.iter().all(|v| *v >= -tol) && (s - scale).abs() <= tol * (1.0 + scale))
        }
        PenaltyKind::CappedSimplexIndicator { total } => {
            let s: f64 = x.iter().sum();
            indicator(
                x.iter().all(|v| *v >= -tol && *v <= 1.0 + tol) && (s - total).abs() <= tol * (1.0 + total),
            )
        }
        PenaltyKind::AffineQuadratic { map, offset } => {
            let xv = DVector::from_column_slice(x);
            0.5 * (map * xv - offset).norm_squared()
        }
    }
}

fn base_prox(kind: &PenaltyKind, gamma: f64, z: &[f64], out: &mut [f64]) {
    match kind {
        PenaltyKind::Zero => out.copy_from_slice(z),
        PenaltyKind::Quadratic { weight } => {
            let s = 1.0 / (1.0 + 2.0 * gamma * weight);
            for (o, v) in out.iter_mut().zip(z) {
                *o = v * s;
            }
        }
        PenaltyKind::L1 { weight } => {
            let t = gamma * weight;
            for (o, &v) in out.iter_mut().zip(z) {
                *o = v.signum() * (v.abs() - t).max(0.0);
            }
        }
        PenaltyKind::L2Norm { weight } => {
            let t = gamma * weight;
            let nz = sq_norm(z).sqrt();
            let s = if nz <= t { 0.0 } else { 1.0 - t / nz };
            for (o, v) in out.iter_mut().zip(z) {
                *o = v * s;
            }
        }
        PenaltyKind::LinfNorm { weight } => {
            // prox_{t‖·‖∞}(z) = z − proj_{tB₁}(z)
            proj_l1_ball(z, gamma * weight, out);
            for (o, v) in out.iter_mut().zip(z) {
                *o = v - *o;
            }
        }
        PenaltyKind::Huber { kappa, weight } => {
            let a = gamma * weight;
            for (o, &v) in out.iter_mut().zip(z) {
                *o = if v.abs() <= kappa * (1.0 + a) {
                    v / (1.0 + a)
                } else {
                    v - a * kappa * v.signum()
                };
            }
        }
        PenaltyKind::Vapnik { eps, weight } => {
            let a = gamma * weight;
            for (o, &v) in out.iter_mut().zip(z) {
                let m = v.abs();
                *o = if m <= *eps {
                    v
                } else if m <= eps + a {
                    eps * v.signum()
                } else {
                    v - a * v.signum()
                };
            }
        }
        PenaltyKind::HuberizedVapnik { eps, kappa, weight } => {
            // deadzone, quadratic shoulders, linear tails
            let a = gamma * weight;
            for (o, &v) in out.iter_mut().zip(z) {
                let m = v.abs();
                *o = if m <= *eps {
                    v
                } else {
                    let s = m - eps;
                    let shift = if s <= kappa * (1.0 + a) { s / (1.0 + a) } else { s - a * kappa };
                    v.signum() * (eps + shift)
                };
            }
        }
        PenaltyKind::Hinge { weight } => {
            let a = gamma * weight;
            for (o, &v) in out.iter_mut().zip(z) {
                *o = if v > a {
                    v - a
                } else if v >= 0.0 {
                    0.0
                } else {
                    v
                };
            }
        }
        PenaltyKind::BoxIndicator { lower, upper } => {
            for (i, (o, v)) in out.iter_mut().zip(z).enumerate() {
                *o = v.max(lower[i]).min(upper[i]);
            }
        }
        PenaltyKind::NonnegIndicator => {
            for (o, v) in out.iter_mut().zip(z) {
                *o = v.max(0.0);
            }
        }
        PenaltyKind::Ball2Indicator { radius } => {
            let nz = sq_norm(z).sqrt();
            let s = if nz <= *radius { 1.0 } else { radius / nz };
            for (o, v) in out.iter_mut().zip(z) {
                *o = v * s;
            }
        }
        PenaltyKind::BallInfIndicator { radius } => {
            for (o, v) in out.iter_mut().zip(z) {
                *o = v.clamp(-radius, *radius);
            }
        }
        PenaltyKind::Ball1Indicator { radius } => proj_l1_ball(z, *radius, out),
        PenaltyKind::SimplexIndicator { scale } => {
            if !z.is_empty() {
                proj_simplex(z, *scale, out)
            }
        }
        PenaltyKind::CappedSimplexIndicator { total } => proj_capped_simplex(z, *total, out),
        PenaltyKind::AffineQuadratic { map, offset } => {
            // (I + γMᵀM)⁻¹(γMᵀb + z)
            let n = z.len();
            let mt = map.transpose();
            let lhs = DMatrix::identity(n, n) + gamma * &mt * map;
            let rhs = gamma * &mt * offset + DVector::from_column_slice(z);
            let sol = lhs
                .cholesky()
                .expect("I + γMᵀM is positive definite")
                .solve(&rhs);
            out.copy_from_slice(sol.as_slice());
        }
    }
}

/// Left and right derivatives of a scalar convex penalty; `None` for kinds
/// that are not coordinate-separable.
fn scalar_derivatives(kind: &PenaltyKind, i: usize, x: f64) -> Option<(f64, f64)> {
    let inf = f64::INFINITY;
    Some(match kind {
        PenaltyKind::Zero => (0.0, 0.0),
        PenaltyKind::Quadratic { weight } => (2.0 * weight * x, 2.0 * weight * x),
        PenaltyKind::L1 { weight } => {
            if x > 0.0 {
                (*weight, *weight)
            } else if x < 0.0 {
                (-weight, -weight)
            } else {
                (-weight, *weight)
            }
        }
        PenaltyKind::Huber { kappa, weight } => {
            let d = weight * x.clamp(-kappa, *kappa);
            (d, d)
        }
        PenaltyKind::Vapnik { eps, weight } => {
            let m = x.abs();
            let w = *weight;
            if m < *eps {
                (0.0, 0.0)
            } else if m > *eps {
                (w * x.signum(), w * x.signum())
            } else if *eps == 0.0 {
                (-w, w)
            } else if x > 0.0 {
                (0.0, w)
            } else {
                (-w, 0.0)
            }
        }
        PenaltyKind::HuberizedVapnik { eps, kappa, weight } => {
            let d = weight * x.signum() * (x.abs() - eps).clamp(0.0, *kappa);
            (d, d)
        }
        PenaltyKind::Hinge { weight } => {
            if x > 0.0 {
                (*weight, *weight)
            } else if x < 0.0 {
                (0.0, 0.0)
            } else {
                (0.0, *weight)
            }
        }
        PenaltyKind::BoxIndicator { lower, upper } => {
            edge_derivatives(x, lower[i], upper[i])
        }
        PenaltyKind::NonnegIndicator => edge_derivatives(x, 0.0, inf),
        PenaltyKind::BallInfIndicator { radius } => edge_derivatives(x, -radius, *radius),
        _ => return None,
    })
}

/// One-sided derivatives of the indicator of `[lo, hi]`; `NaN` outside.
fn edge_derivatives(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    if x < lo || x > hi {
        return (f64::NAN, f64::NAN);
    }
    let l = if x == lo { f64::NEG_INFINITY } else { 0.0 };
    let r = if x == hi { f64::INFINITY } else { 0.0 };
    (l, r)
}

fn clamp_into_box(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn base_subgradient_distance(kind: &PenaltyKind, x: &[f64], g: &[f64], tol: f64) -> f64 {
    // Coordinate-separable kinds: ∂ρ over [x − tol, x + tol] is the interval
    // [ρ'₋(x − tol), ρ'₊(x + tol)] by monotonicity of the subdifferential.
    if is_coordinate_separable(kind) {
        let mut d2 = 0.0;
        for (i, (&xi, &gi)) in x.iter().zip(g).enumerate() {
            let (lo_pt, hi_pt) = match kind {
                PenaltyKind::BoxIndicator { lower, upper } => {
                    let (l, u) = (lower[i], upper[i]);
                    let slack = tol * (1.0 + xi.abs());
                    if xi < l - slack || xi > u + slack {
                        return f64::INFINITY;
                    }
                    (clamp_into_box(xi - slack, l, u), clamp_into_box(xi + slack, l, u))
                }
                PenaltyKind::NonnegIndicator => {
                    let slack = tol * (1.0 + xi.abs());
                    if xi < -slack {
                        return f64::INFINITY;
                    }
                    ((xi - slack).max(0.0), (xi + slack).max(0.0))
                }
                PenaltyKind::BallInfIndicator { radius } => {
                    let slack = tol * (1.0 + xi.abs());
                    if xi.abs() > radius + slack {
                        return f64::INFINITY;
                    }
                    (
                        clamp_into_box(xi - slack, -radius, *radius),
                        clamp_into_box(xi + slack, -radius, *radius),
                    )
                }
                _ => (xi - tol, xi + tol),
            };
            let snap = |p: f64| snap_to_kink(kind, i, p, tol);
            let (lo, _) = scalar_derivatives(kind, i, snap(lo_pt)).unwrap_or((f64::NAN, f64::NAN));
            let (_, hi) = scalar_derivatives(kind, i, snap(hi_pt)).unwrap_or((f64::NAN, f64::NAN));
            let proj = gi.max(lo).min(hi);
            d2 += (gi - proj).powi(2);
        }
        return d2.sqrt();
    }

    match kind {
        PenaltyKind::L2Norm { weight } => {
            let nx = sq_norm(x).sqrt();
            if nx > tol {
                g.iter()
                    .zip(x)
                    .map(|(gi, xi)| (gi - weight * xi / nx).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                (sq_norm(g).sqrt() - weight).max(0.0)
            }
        }
        PenaltyKind::LinfNorm { weight } => {
            let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut p = vec![0.0; g.len()];
            if m <= tol {
                proj_l1_ball(g, *weight, &mut p);
                return g.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            }
            let mut off = 0.0;
            let mut active = Vec::new();
            for (xi, gi) in x.iter().zip(g) {
                if xi.abs() >= m - tol {
                    active.push(xi.signum() * gi);
                } else {
                    off += gi * gi;
                }
            }
            let mut pa = vec![0.0; active.len()];
            proj_simplex(&active, *weight, &mut pa);
            (off + active.iter().zip(&pa).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sqrt()
        }
        PenaltyKind::Ball2Indicator { radius } => {
            let nx = sq_norm(x).sqrt();
            if nx > radius + tol {
                f64::INFINITY
            } else if nx < radius - tol {
                sq_norm(g).sqrt()
            } else {
                let along: f64 = g.iter().zip(x).map(|(a, b)| a * b / nx).sum::<f64>().max(0.0);
                g.iter()
                    .zip(x)
                    .map(|(gi, xi)| (gi - along * xi / nx).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
        PenaltyKind::Ball1Indicator { radius } => {
            let n1: f64 = x.iter().map(|v| v.abs()).sum();
            if n1 > radius + tol {
                f64::INFINITY
            } else if n1 < radius - tol {
                sq_norm(g).sqrt()
            } else {
                // normal cone = {t·s : t ≥ 0, s ∈ ∂‖x‖₁}
                let mut full = Vec::new();
                let mut upper = Vec::new();
                for (xi, gi) in x.iter().zip(g) {
                    if xi.abs() > tol {
                        full.push(xi.signum() * gi);
                    } else {
                        upper.push(gi.abs());
                    }
                }
                min_hinged_quadratic(&full, &upper, &[], Some(0.0)).max(0.0).sqrt()
            }
        }
        PenaltyKind::SimplexIndicator { scale } => {
            let s: f64 = x.iter().sum();
            if x.iter().any(|v| *v < -tol) || (s - scale).abs() > tol * (x.len() as f64 + scale) {
                return f64::INFINITY;
            }
            // normal cone = {λ𝟙 − μ : μ ≥ 0, μᵢ = 0 where xᵢ > 0}
            let mut full = Vec::new();
            let mut upper = Vec::new();
            for (xi, gi) in x.iter().zip(g) {
                if *xi > tol {
                    full.push(*gi);
                } else {
                    upper.push(*gi);
                }
            }
            min_hinged_quadratic(&full, &upper, &[], None).max(0.0).sqrt()
        }
        PenaltyKind::CappedSimplexIndicator { total } => {
            let s: f64 = x.iter().sum();
            if x.iter().any(|v| *v < -tol || *v > 1.0 + tol) || (s - total).abs() > tol * (x.len() as f64 + total) {
                return f64::INFINITY;
            }
            let mut full = Vec::new();
            let mut upper = Vec::new();
            let mut lower = Vec::new();
            for (xi, gi) in x.iter().zip(g) {
                let at_zero = *xi <= tol;
                let at_one = *xi >= 1.0 - tol;
                match (at_zero, at_one) {
                    (true, true) => {}
                    (true, false) => upper.push(*gi),
                    (false, true) => lower.push(*gi),
                    (false, false) => full.push(*gi),
                }
            }
            if full.is_empty() && upper.is_empty() && lower.is_empty() {
                return 0.0;
            }
            min_hinged_quadratic(&full, &upper, &lower, None).max(0.0).sqrt()
        }
        PenaltyKind::AffineQuadratic { map, offset } => {
            let xv = DVector::from_column_slice(x);
            let grad = map.transpose() * (map * xv - offset);
            g.iter().zip(grad.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        }
        _ => unreachable!("separable kinds handled above"),
    }
}

fn is_coordinate_separable(kind: &PenaltyKind) -> bool {
    matches!(
        kind,
        PenaltyKind::Zero
            | PenaltyKind::Quadratic { .. }
            | PenaltyKind::L1 { .. }
            | PenaltyKind::Huber { .. }
            | PenaltyKind::Vapnik { .. }
            | PenaltyKind::HuberizedVapnik { .. }
            | PenaltyKind::Hinge { .. }
            | PenaltyKind::BoxIndicator { .. }
            | PenaltyKind::NonnegIndicator
            | PenaltyKind::BallInfIndicator { .. }
    )
}

/// Moves `p` onto a kink of the scalar penalty when it is within `tol` of one,
/// so that the one-sided derivatives pick up the full kink interval.
fn snap_to_kink(kind: &PenaltyKind, i: usize, p: f64, tol: f64) -> f64 {
    let kinks: [f64; 2] = match kind {
        PenaltyKind::L1 { .. } | PenaltyKind::Hinge { .. } => [0.0, 0.0],
        PenaltyKind::Vapnik { eps, .. } => [-eps, *eps],
        PenaltyKind::BoxIndicator { lower, upper } => [lower[i], upper[i]],
        PenaltyKind::NonnegIndicator => [0.0, 0.0],
        PenaltyKind::BallInfIndicator { radius } => [-radius, *radius],
        _ => return p,
    };
    for k in kinks {
        if (p - k).abs() <= tol * (1.0 + k.abs()) {
            return k;
        }
    }
    p
}
