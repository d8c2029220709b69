use std::path::Path;

use singkal::config::{ModelKind, PenaltySpec, RunConfig};
use singkal::drs::Status;
use singkal::pipeline::{run, simulate};
use singkal::sim::simulate_dc_motor;

fn position_rmse(cfg: &RunConfig) -> f64 {
    let out = run(cfg, Path::new("."), false).unwrap();
    let rmse = out.report.truth_rmse.unwrap();
    (rmse[..3].iter().map(|(_, v)| v * v).sum::<f64>()).sqrt()
}

#[test]
fn sparser_fixes_do_not_improve_the_track() {
    let mut dense = RunConfig::new(ModelKind::KinematicNav);
    dense.seed = 1;
    dense.mooring.fix_interval = 30.0;
    let mut sparse = dense.clone();
    sparse.mooring.fix_interval = 120.0;
    let (a, b) = (position_rmse(&dense), position_rmse(&sparse));
    assert!(b >= a, "30 s fixes: {a}, 120 s fixes: {b}");
}

#[test]
fn noiseless_dc_motor_at_rest_stays_at_zero() {
    let mut cfg = RunConfig::new(ModelKind::DcMotor);
    cfg.dc_motor.process_sd = 0.0;
    cfg.dc_motor.meas_sd = 0.0;
    cfg.dc_motor.outlier_fraction = 0.0;
    cfg.dc_motor.input_amplitude = 0.0;
    let d = simulate_dc_motor(&cfg.dc_motor, 7).unwrap();
    assert!(d.y.iter().chain(d.truth.iter().flatten()).all(|v| *v == 0.0));
}

#[test]
fn gaussian_smoother_on_dc_motor_matches_rts() {
    let mut cfg = RunConfig::new(ModelKind::DcMotor);
    cfg.penalties.measurement = Some(PenaltySpec::quadratic());
    cfg.solver.max_iter = 20_000;
    cfg.solver.tol_change = 1e-12;
    let out = run(&cfg, Path::new("."), false).unwrap();
    assert_eq!(out.report.status, Status::Converged);
    let p = &out.prepared.problem;
    let prior = singkal::baselines::default_prior_cov(p).unwrap();
    let rts = singkal::baselines::rts_smooth(p, &prior).unwrap();
    let d = out
        .states()
        .iter()
        .zip(&rts.means)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    assert!(d < 1e-6, "{d}");
}

#[test]
fn simulated_files_are_deterministic() {
    let cfg = RunConfig::new(ModelKind::DcMotor);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(&cfg, a.path(), false).unwrap();
    simulate(&cfg, b.path(), false).unwrap();
    let read = |d: &Path| std::fs::read(d.join("dc_motor.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(read(a.path()).iter().filter(|c| **c == b'\n').count(), 101);
}
