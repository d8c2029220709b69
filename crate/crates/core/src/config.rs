//! JSON run configuration. Every struct rejects unknown keys.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drs::DrsParams;
use crate::error::{Error, Result};
use crate::navigation::{Axis, CovarianceMode, NavConfig};
use crate::plq::Penalty;
use crate::sim::{DcMotorParams, MooringParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DcMotor,
    KinematicNav,
    CustomCsv,
}

/// A penalty written as `{"kind": "...", <parameters>}`.
///
/// `weight` defaults to 1, except for `quadratic` where it defaults to ½ so
/// that the penalty is the Gaussian negative log-likelihood. Parameters that
/// the kind does not use are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Rows of the matrix for `affine_quadratic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_quadratic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<f64>,
}

impl PenaltySpec {
    pub fn parse(json: &str) -> Result<Penalty> {
        let spec: PenaltySpec = serde_json::from_str(json)?;
        spec.to_penalty()
    }

    fn used(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let opts: [(&'static str, bool); 10] = [
            ("weight", self.weight.is_some()),
            ("kappa", self.kappa.is_some()),
            ("eps", self.eps.is_some()),
            ("radius", self.radius.is_some()),
            ("scale", self.scale.is_some()),
            ("total", self.total.is_some()),
            ("lower", self.lower.is_some()),
            ("upper", self.upper.is_some()),
            ("map", self.map.is_some()),
            ("offset", self.offset.is_some()),
        ];
        for (name, set) in opts {
            if set {
                v.push(name);
            }
        }
        v
    }

    pub fn to_penalty(&self) -> Result<Penalty> {
        let allowed: &[&str] = match self.kind.as_str() {
            "zero" | "nonneg" => &[],
            "quadratic" | "l1" | "l2_norm" | "linf_norm" | "hinge" => &["weight"],
            "huber" => &["weight", "kappa"],
            "vapnik" => &["weight", "eps"],
            "huberized_vapnik" => &["weight", "eps", "kappa"],
            "box" => &["lower", "upper"],
            "ball2" | "ball_inf" | "ball1" => &["radius"],
            "simplex" => &["scale"],
            "capped_simplex" => &["total"],
            "affine_quadratic" => &["map", "offset"],
            other => return Err(Error::Argument(format!("unknown penalty kind {other:?}"))),
        };
        if let Some(extra) = self.used().into_iter().find(|p| !allowed.contains(p)) {
            return Err(Error::Argument(format!("penalty kind {:?} does not take {extra:?}", self.kind)));
        }
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Argument(format!("penalty kind {:?} needs {name:?}", self.kind)))
        };
        let w = self.weight.unwrap_or(1.0);
        let base = match self.kind.as_str() {
            "zero" => Penalty::zero(),
            "nonneg" => Penalty::nonneg(),
            "quadratic" => Penalty::quadratic(self.weight.unwrap_or(0.5))?,
            "l1" => Penalty::l1(w)?,
            "l2_norm" => Penalty::l2_norm(w)?,
            "linf_norm" => Penalty::linf_norm(w)?,
            "hinge" => Penalty::hinge(w)?,
            "huber" => Penalty::huber(need(self.kappa, "kappa")?, w)?,
            "vapnik" => Penalty::vapnik(need(self.eps, "eps")?, w)?,
            "huberized_vapnik" => Penalty::huberized_vapnik(need(self.eps, "eps")?, need(self.kappa, "kappa")?, w)?,
            "box" => {
                let lower = self.lower.clone().ok_or_else(|| Error::Argument("box needs \"lower\"".into()))?;
                let upper = self.upper.clone().ok_or_else(|| Error::Argument("box needs \"upper\"".into()))?;
                Penalty::boxed(lower, upper)?
            }
            "ball2" => Penalty::ball2(need(self.radius, "radius")?)?,
            "ball_inf" => Penalty::ball_inf(need(self.radius, "radius")?)?,
            "ball1" => Penalty::ball1(need(self.radius, "radius")?)?,
            "simplex" => Penalty::simplex(need(self.scale, "scale")?)?,
            "capped_simplex" => Penalty::capped_simplex(need(self.total, "total")?)?,
            "affine_quadratic" => {
                let rows = self.map.as_ref().ok_or_else(|| Error::Argument("affine_quadratic needs \"map\"".into()))?;
                let offset = self
                    .offset
                    .as_ref()
                    .ok_or_else(|| Error::Argument("affine_quadratic needs \"offset\"".into()))?;
                Penalty::affine_quadratic(matrix_from_rows(rows, "map")?, DVector::from_column_slice(offset))?
            }
            _ => unreachable!("kind checked above"),
        };
        let mut p = base;
        if let Some(alpha) = self.envelope {
            p = p.with_envelope(alpha)?;
        }
        if let Some(g) = self.add_quadratic {
            p = p.with_added_quadratic(g)?;
        }
        Ok(p)
    }

    pub fn quadratic() -> Self {
        PenaltySpec {
            kind: "quadratic".into(),
            ..Default::default()
        }
    }

    pub fn huber(kappa: f64) -> Self {
        PenaltySpec {
            kind: "huber".into(),
            kappa: Some(kappa),
            ..Default::default()
        }
    }
}

/// Builds a matrix from row vectors, rejecting ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Argument(format!(
            "{what}: row {} has {} entries, expected {ncols}",
            i + 1,
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Penalty overrides; unset entries take the model's defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<PenaltySpec>,
    /// For navigation this applies to the acceleration rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PenaltySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<PenaltySpec>,
    /// Navigation position-fix rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<PenaltySpec>,
}

/// Serializable navigation settings; penalties come from [`PenaltyConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavSettings {
    pub dt: f64,
    pub q_scale: f64,
    pub r_accel: f64,
    pub deadzone_eps: f64,
    pub accel_kappa: f64,
    pub bias_axes: Vec<Axis>,
    pub covariance_mode: CovarianceMode,
    pub initial_sd: Option<[f64; 3]>,
    pub state_units: [f64; 3],
}

impl Default for NavSettings {
    fn default() -> Self {
        let c = NavConfig::default();
        NavSettings {
            dt: c.dt,
            q_scale: c.q_scale,
            r_accel: c.r_accel,
            deadzone_eps: c.deadzone_eps,
            accel_kappa: c.accel_kappa,
            bias_axes: c.bias_axes,
            covariance_mode: c.covariance_mode,
            initial_sd: c.initial_sd,
            state_units: c.state_units,
        }
    }
}

impl NavSettings {
    pub fn to_nav_config(&self, pens: &PenaltyConfig) -> Result<NavConfig> {
        let mut c = NavConfig {
            dt: self.dt,
            q_scale: self.q_scale,
            r_accel: self.r_accel,
            deadzone_eps: self.deadzone_eps,
            accel_kappa: self.accel_kappa,
            bias_axes: self.bias_axes.clone(),
            covariance_mode: self.covariance_mode,
            initial_sd: self.initial_sd,
            state_units: self.state_units,
            ..NavConfig::default()
        };
        if let Some(p) = &pens.process {
            c.process_penalty = p.to_penalty()?;
        }
        if let Some(p) = &pens.measurement {
            c.accel_penalty = Some(p.to_penalty()?);
        }
        if let Some(p) = &pens.position {
            c.position_penalty = p.to_penalty()?;
        }
        if let Some(p) = &pens.state {
            if p.to_penalty()? != Penalty::zero() {
                return Err(Error::Argument("navigation models take no state penalty".into()));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// A time-invariant linear model given by its matrices (rows of numbers).
/// Measurements come from a CSV with columns `t, y1, …, ym`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub x0: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub qroot: Vec<Vec<f64>>,
    pub rroot: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_offset: Option<Vec<f64>>,
    /// Number of steps produced by `simulate`.
    #[serde(default = "default_custom_steps")]
    pub steps: usize,
}

fn default_custom_steps() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dc_motor_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imu_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixes_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurements_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub penalties: PenaltyConfig,
    #[serde(default)]
    pub solver: DrsParams,
    #[serde(default)]
    pub nav: NavSettings,
    #[serde(default)]
    pub dc_motor: DcMotorParams,
    #[serde(default)]
    pub mooring: MooringParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomModel>,
    #[serde(default)]
    pub io: IoConfig,
}

impl RunConfig {
    pub fn new(model: ModelKind) -> Self {
        RunConfig {
            model,
            seed: 0,
            penalties: PenaltyConfig::default(),
            solver: DrsParams::default(),
            nav: NavSettings::default(),
            dc_motor: DcMotorParams::default(),
            mooring: MooringParams::default(),
            custom: None,
            io: IoConfig::default(),
        }
    }

    /// Parses and checks everything that can be checked without data.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        for spec in [&self.penalties.process, &self.penalties.measurement, &self.penalties.state, &self.penalties.position]
            .into_iter()
            .flatten()
        {
            spec.to_penalty()?;
        }
        match self.model {
            ModelKind::DcMotor => {
                self.dc_motor.validate()?;
                if self.penalties.position.is_some() {
                    return Err(Error::Argument("the position penalty applies only to kinematic_nav".into()));
                }
            }
            ModelKind::KinematicNav => {
                self.mooring.validate()?;
                self.nav.to_nav_config(&self.penalties)?;
            }
            ModelKind::CustomCsv => {
                let c = self
                    .custom
                    .as_ref()
                    .ok_or_else(|| Error::Argument("model custom_csv needs a \"custom\" section".into()))?;
                c.matrices()?;
                if self.penalties.position.is_some() {
                    return Err(Error::Argument("the position penalty applies only to kinematic_nav".into()));
                }
            }
        }
        Ok(())
    }
}

/// Matrices of a [`CustomModel`] after shape checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomMatrices {
    pub x0: DVector<f64>,
    pub transition: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub qroot: DMatrix<f64>,
    pub rroot: DMatrix<f64>,
    pub process_offset: DVector<f64>,
}

impl CustomModel {
    pub fn matrices(&self) -> Result<CustomMatrices> {
        let n = self.x0.len();
        if n == 0 {
            return Err(Error::Argument("custom model needs a nonempty x0".into()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("custom x0 has non-finite entries".into()));
        }
        let g = matrix_from_rows(&self.transition, "transition")?;
        let h = matrix_from_rows(&self.h, "h")?;
        let q = matrix_from_rows(&self.qroot, "qroot")?;
        let r = matrix_from_rows(&self.rroot, "rroot")?;
        if g.shape() != (n, n) {
            return Err(Error::dim("custom transition rows/cols", n, if g.nrows() != n { g.nrows() } else { g.ncols() }));
        }
        if h.ncols() != n {
            return Err(Error::dim("custom h columns", n, h.ncols()));
        }
        if q.nrows() != n {
            return Err(Error::dim("custom qroot rows", n, q.nrows()));
        }
        if r.nrows() != h.nrows() {
            return Err(Error::dim("custom rroot rows", h.nrows(), r.nrows()));
        }
        let offset = match &self.process_offset {
            Some(o) if o.len() != n => return Err(Error::dim("custom process_offset", n, o.len())),
            Some(o) if o.iter().any(|v| !v.is_finite()) => {
                return Err(Error::Argument("custom process_offset has non-finite entries".into()))
            }
            Some(o) => DVector::from_column_slice(o),
            None => DVector::zeros(n),
        };
        if self.steps == 0 {
            return Err(Error::Argument("custom steps must be at least 1".into()));
        }
        Ok(CustomMatrices {
            x0: DVector::from_column_slice(&self.x0),
            transition: g,
            h,
            qroot: q,
            rroot: r,
            process_offset: offset,
        })
    }
}
