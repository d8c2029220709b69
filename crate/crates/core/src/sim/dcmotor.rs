use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::StepModel;

/// Transition of the two-state DC motor (angular velocity, shaft angle).
pub const DC_MOTOR_TRANSITION: [[f64; 2]; 2] = [[0.7, 0.0], [0.084, 1.0]];
/// Input column; the disturbance enters through the same column.
pub const DC_MOTOR_INPUT: [f64; 2] = [11.81, 0.62];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcMotorParams {
    pub steps: usize,
    /// State before the first transition.
    pub x_init: [f64; 2],
    /// Standard deviation of the scalar input disturbance.
    pub process_sd: f64,
    /// Standard deviation of nominal angle measurements.
    pub meas_sd: f64,
    /// Fraction of measurements replaced by draws with `outlier_sd`.
    pub outlier_fraction: f64,
    pub outlier_sd: f64,
    /// Known input `c = amplitude · sin(2πk / period)`.
    pub input_amplitude: f64,
    pub input_period: f64,
}

impl Default for DcMotorParams {
    fn default() -> Self {
        DcMotorParams {
            steps: 100,
            x_init: [0.0, 0.0],
            process_sd: 0.02,
            meas_sd: 0.1,
            outlier_fraction: 0.1,
            outlier_sd: 5.0,
            input_amplitude: 0.05,
            input_period: 40.0,
        }
    }
}

impl DcMotorParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Argument(format!("dc motor {name} must be finite and nonnegative, got {v}")))
            }
        };
        if self.steps == 0 {
            return Err(Error::Argument("dc motor needs at least one step".into()));
        }
        nonneg("process_sd", self.process_sd)?;
        nonneg("meas_sd", self.meas_sd)?;
        nonneg("outlier_sd", self.outlier_sd)?;
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::Argument(format!(
                "outlier_fraction must lie in [0, 1], got {}",
                self.outlier_fraction
            )));
        }
        if !self.input_amplitude.is_finite() || !(self.input_period > 0.0) {
            return Err(Error::Argument("input amplitude must be finite and period positive".into()));
        }
        if !self.x_init.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("x_init must be finite".into()));
        }
        Ok(())
    }

    pub fn input(&self, k: usize) -> f64 {
        self.input_amplitude * (2.0 * std::f64::consts::PI * k as f64 / self.input_period).sin()
    }
}

/// One simulated DC motor record; `input` is the input applied on the
/// transition into this step.
#[derive(Debug, Clone, PartialEq)]
pub struct DcMotorData {
    pub t: Vec<f64>,
    pub input: Vec<f64>,
    pub y: Vec<f64>,
    pub truth: Vec<[f64; 2]>,
    pub outliers: Vec<bool>,
}

pub fn transition() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.084, 1.0])
}

pub fn input_column() -> DVector<f64> {
    DVector::from_column_slice(&DC_MOTOR_INPUT)
}

pub fn simulate_dc_motor(params: &DcMotorParams, seed: u64) -> Result<DcMotorData> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = transition();
    let b = input_column();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = DVector::from_column_slice(&params.x_init);
    let mut out = DcMotorData {
        t: Vec::with_capacity(params.steps),
        input: Vec::with_capacity(params.steps),
        y: Vec::with_capacity(params.steps),
        truth: Vec::with_capacity(params.steps),
        outliers: Vec::with_capacity(params.steps),
    };
    for k in 1..=params.steps {
        let c = params.input(k - 1);
        let d = params.process_sd * unit.sample(&mut rng);
        x = &g * x + &b * (c + d);
        let outlier = rng.gen::<f64>() < params.outlier_fraction;
        let sd = if outlier { params.outlier_sd } else { params.meas_sd };
        let v = sd * unit.sample(&mut rng);
        out.t.push(k as f64);
        out.input.push(c);
        out.y.push(x[1] + v);
        out.truth.push([x[0], x[1]]);
        out.outliers.push(outlier);
    }
    Ok(out)
}

/// Step models for smoothing DC motor data with the nominal noise levels.
///
/// Returns the anchor `G x_init` and one step per record.
pub fn dc_motor_steps(
    x_init: [f64; 2],
    input: &[f64],
    y: &[f64],
    process_sd: f64,
    meas_sd: f64,
) -> Result<(DVector<f64>, Vec<StepModel>)> {
    if input.len() != y.len() {
        return Err(Error::dim("dc motor input/measurement", y.len(), input.len()));
    }
    if !(process_sd >= 0.0 && process_sd.is_finite()) || !(meas_sd >= 0.0 && meas_sd.is_finite()) {
        return Err(Error::Argument(format!(
            "dc motor smoothing needs finite process_sd ≥ 0 and meas_sd ≥ 0, got {process_sd}, {meas_sd}"
        )));
    }
    let g = transition();
    let b = input_column();
    let x0 = &g * DVector::from_column_slice(&x_init);
    let qroot = DMatrix::from_column_slice(2, 1, (&b * process_sd).as_slice());
    let steps = input
        .iter()
        .zip(y)
        .enumerate()
        .map(|(k, (&c, &yk))| {
            StepModel::new(
                (k > 0).then(|| g.clone()),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                qroot.clone(),
                DMatrix::from_element(1, 1, meas_sd),
                DVector::from_element(1, yk),
            )
            .with_offset(&b * c)
        })
        .collect();
    Ok((x0, steps))
}
