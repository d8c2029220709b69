//! Synthetic data: random linear models, the DC motor, and the mooring proxy.

mod dcmotor;
mod mooring;

pub use dcmotor::{dc_motor_steps, simulate_dc_motor, DcMotorData, DcMotorParams, DC_MOTOR_INPUT, DC_MOTOR_TRANSITION};
pub use mooring::{simulate_mooring, AxisMotion, MooringData, MooringParams, TruthSample, ACCEL_QUANTUM, ATTITUDE_QUANTUM};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::statespace::StepModel;

/// Shape of a random linear model. Ranks are clamped to the matching dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomModelSpec {
    pub steps: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    /// Columns of the process-noise root.
    pub process_rank: usize,
    /// Columns of the measurement-noise root.
    pub meas_rank: usize,
    /// Rank of the measurement map.
    pub map_rank: usize,
}

impl RandomModelSpec {
    /// Full-rank square roots and a full-rank measurement map.
    pub fn nonsingular(steps: usize, state_dim: usize, meas_dim: usize) -> Self {
        RandomModelSpec {
            steps,
            state_dim,
            meas_dim,
            process_rank: state_dim,
            meas_rank: meas_dim,
            map_rank: meas_dim.min(state_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomModel {
    pub x0: DVector<f64>,
    pub steps: Vec<StepModel>,
    pub truth: Vec<DVector<f64>>,
}

pub(crate) fn gaussian_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn gaussian_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random model whose states and measurements are drawn from the model
/// itself with standard-normal noise through the given roots.
pub fn random_model(rng: &mut impl Rng, spec: RandomModelSpec) -> RandomModel {
    let (n, m) = (spec.state_dim, spec.meas_dim);
    let x0 = gaussian_vector(rng, n);
    let mut steps = Vec::with_capacity(spec.steps);
    let mut truth: Vec<DVector<f64>> = Vec::with_capacity(spec.steps);
    for k in 0..spec.steps {
        // contractive enough that long horizons stay bounded
        let g = gaussian_matrix(rng, n, n) * (0.6 / (n as f64).sqrt()) + DMatrix::identity(n, n) * 0.4;
        let qroot = gaussian_matrix(rng, n, spec.process_rank.min(n)) * 0.5;
        let rroot = gaussian_matrix(rng, m, spec.meas_rank.min(m)) * 0.5;
        let hr = spec.map_rank.min(m).min(n);
        let h = gaussian_matrix(rng, m, hr) * gaussian_matrix(rng, hr, n);

        let prev = if k == 0 { x0.clone() } else { &g * &truth[k - 1] };
        let x = prev - &qroot * gaussian_vector(rng, qroot.ncols());
        let y = &h * &x + &rroot * gaussian_vector(rng, rroot.ncols());
        truth.push(x);
        steps.push(StepModel::new(if k == 0 { None } else { Some(g) }, h, qroot, rroot, y));
    }
    RandomModel { x0, steps, truth }
}
