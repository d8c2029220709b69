//! Synthetic stand-in for a moored survey platform: smooth drifting motion,
//! a quantized body-frame accelerometer with attitude, and sparse noisy
//! position fixes.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::navigation::{rotation_matrix, Attitude, ImuSample, PositionFix};

/// Accelerometer resolution in m/s².
pub const ACCEL_QUANTUM: f64 = 0.00766;
/// Attitude resolution in radians (0.1°).
pub const ATTITUDE_QUANTUM: f64 = 0.1 * std::f64::consts::PI / 180.0;

/// Motion along one world axis: `start + velocity·t + amplitude·sin(2πt/period + phase)`
/// with a seeded phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisMotion {
    pub start: f64,
    pub velocity: f64,
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MooringParams {
    pub duration: f64,
    pub rate_hz: f64,
    pub fix_interval: f64,
    pub motion: [AxisMotion; 3],
    /// Peak roll, pitch and heading swings in radians.
    pub attitude_amplitude: [f64; 3],
    pub attitude_period: [f64; 3],
    pub accel_noise_sd: f64,
    /// World-frame accelerometer bias in m/s².
    pub bias: [f64; 3],
    /// Range of per-fix standard deviations for x and y.
    pub fix_sd_horizontal: [f64; 2],
    pub fix_sd_depth: [f64; 2],
}

impl Default for MooringParams {
    fn default() -> Self {
        MooringParams {
            duration: 600.0,
            rate_hz: 25.0,
            fix_interval: 30.0,
            motion: [
                AxisMotion {
                    start: 0.0,
                    velocity: 0.3,
                    amplitude: 20.0,
                    period: 120.0,
                },
                AxisMotion {
                    start: 0.0,
                    velocity: -0.2,
                    amplitude: 15.0,
                    period: 90.0,
                },
                AxisMotion {
                    start: 50.0,
                    velocity: 0.0,
                    amplitude: 4.0,
                    period: 60.0,
                },
            ],
            attitude_amplitude: [0.05, 0.05, 0.6],
            attitude_period: [7.0, 11.0, 200.0],
            accel_noise_sd: 0.002,
            bias: [0.0; 3],
            fix_sd_horizontal: [3.7, 7.5],
            fix_sd_depth: [0.8, 4.0],
        }
    }
}

impl MooringParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("duration", self.duration), ("rate_hz", self.rate_hz), ("fix_interval", self.fix_interval)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.duration * self.rate_hz > 1e7 {
            return Err(Error::Argument("duration × rate_hz exceeds 10⁷ samples".into()));
        }
        for m in &self.motion {
            if !(m.period > 0.0) || ![m.start, m.velocity, m.amplitude, m.period].iter().all(|v| v.is_finite()) {
                return Err(Error::Argument(format!("invalid axis motion {m:?}")));
            }
        }
        if self.attitude_period.iter().any(|p| !(*p > 0.0 && p.is_finite()))
            || self.attitude_amplitude.iter().any(|a| !a.is_finite())
        {
            return Err(Error::Argument("attitude amplitudes must be finite and periods positive".into()));
        }
        if !(self.accel_noise_sd >= 0.0 && self.accel_noise_sd.is_finite()) || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Argument("accel_noise_sd must be nonnegative and bias finite".into()));
        }
        for (name, [lo, hi]) in [("fix_sd_horizontal", self.fix_sd_horizontal), ("fix_sd_depth", self.fix_sd_depth)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Argument(format!("{name} must satisfy 0 < lo ≤ hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthSample {
    pub t: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MooringData {
    pub imu: Vec<ImuSample>,
    pub fixes: Vec<PositionFix>,
    pub truth: Vec<TruthSample>,
}

fn quantize(v: f64, q: f64) -> f64 {
    (v / q).round() * q
}

pub fn simulate_mooring(params: &MooringParams, seed: u64) -> Result<MooringData> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));
    let att_phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));

    let n = (params.duration * params.rate_hz).round() as usize;
    let fix_every = ((params.fix_interval * params.rate_hz).round() as usize).max(1);
    let mut imu = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut fixes = Vec::new();
    for k in 0..n {
        let t = k as f64 / params.rate_hz;
        let mut sample = TruthSample {
            t,
            position: [0.0; 3],
            velocity: [0.0; 3],
            acceleration: [0.0; 3],
        };
        for (i, m) in params.motion.iter().enumerate() {
            let w = TAU / m.period;
            let (s, c) = (w * t + phase[i]).sin_cos();
            sample.position[i] = m.start + m.velocity * t + m.amplitude * s;
            sample.velocity[i] = m.velocity + m.amplitude * w * c;
            sample.acceleration[i] = -m.amplitude * w * w * s;
        }
        let angles: [f64; 3] = std::array::from_fn(|i| {
            params.attitude_amplitude[i] * (TAU * t / params.attitude_period[i] + att_phase[i]).sin()
        });
        let att = Attitude {
            roll: angles[0],
            pitch: angles[1],
            heading: angles[2],
        };
        let world = Vector3::from(sample.acceleration) + Vector3::from(params.bias);
        let body = rotation_matrix(&att).transpose() * world;
        let accel_body: [f64; 3] = std::array::from_fn(|i| {
            let e: f64 = rng.sample(StandardNormal);
            quantize(body[i] + params.accel_noise_sd * e, ACCEL_QUANTUM)
        });
        imu.push(ImuSample {
            t,
            accel_body,
            attitude: Attitude {
                roll: quantize(att.roll, ATTITUDE_QUANTUM),
                pitch: quantize(att.pitch, ATTITUDE_QUANTUM),
                heading: quantize(att.heading, ATTITUDE_QUANTUM),
            },
        });
        if k % fix_every == 0 {
            let [hlo, hhi] = params.fix_sd_horizontal;
            let [dlo, dhi] = params.fix_sd_depth;
            let h = if hhi > hlo { rng.gen_range(hlo..=hhi) } else { hlo };
            let d = if dhi > dlo { rng.gen_range(dlo..=dhi) } else { dlo };
            let sd = [h, h, d];
            let xyz: [f64; 3] = std::array::from_fn(|i| {
                let e: f64 = rng.sample(StandardNormal);
                sample.position[i] + sd[i] * e
            });
            fixes.push(PositionFix { t, xyz, sd });
        }
        truth.push(sample);
    }
    Ok(MooringData { imu, fixes, truth })
}
