use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::statespace::{assemble, check_surjectivity, rescale_states, restore_state_units};

/// `e^{M}` by scaling, a 10-term Taylor series, and squaring.
fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = m.iter().fold(0.0f64, |a, v| a + v.abs());
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=10 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn generator() -> DMatrix<f64> {
    let mut f = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for i in 0..3 {
        f[(POSITION + i, VELOCITY + i)] = 1.0;
        f[(VELOCITY + i, ACCELERATION + i)] = 1.0;
    }
    f
}

/// Composite Simpson rule for `∫₀ᵀ e^{Fs} G Gᵀ e^{Fᵀs} ds` with noise entering velocity.
fn qderiv_quadrature(dt: f64, q_scale: f64, panels: usize) -> DMatrix<f64> {
    let f = generator();
    let mut g = DMatrix::zeros(STATE_DIM, 3);
    for i in 0..3 {
        g[(VELOCITY + i, i)] = 1.0;
    }
    let integrand = |s: f64| {
        let e = expm_series(&(&f * s));
        &e * &g * g.transpose() * e.transpose() * q_scale
    };
    let h = dt / panels as f64;
    let mut acc = integrand(0.0) + integrand(dt);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += integrand(i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

fn random_attitude(rng: &mut impl Rng) -> Attitude {
    Attitude {
        roll: rng.gen_range(-3.2..3.2),
        pitch: rng.gen_range(-3.2..3.2),
        heading: rng.gen_range(-7.0..7.0),
    }
}

fn imu_stream(n: usize, dt: f64) -> Vec<ImuSample> {
    (0..n)
        .map(|k| ImuSample {
            t: k as f64 * dt,
            accel_body: [0.01 * k as f64, -0.02, 0.03],
            attitude: Attitude::default(),
        })
        .collect()
}

fn fix(t: f64, xyz: [f64; 3]) -> PositionFix {
    PositionFix { t, xyz, sd: [5.0, 5.0, 2.0] }
}

#[test]
fn rotation_identity() {
    assert_eq!(rotation_matrix(&Attitude::default()), Matrix3::identity());
}

#[test]
fn rotation_heading_quarter_turn() {
    let r = rotation_matrix(&Attitude {
        heading: FRAC_PI_2,
        ..Attitude::default()
    });
    // R_h at h = π/2 is [[0,1,0],[−1,0,0],[0,0,1]]; R is its transpose
    let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert!((r - expect).amax() < 1e-15);
}

#[test]
fn rotation_orthonormal_for_random_attitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let r = rotation_matrix(&random_attitude(&mut rng));
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rotation_composes_elementary_turns() {
    // roll alone turns about x; body y maps to (0, cos r, sin r)
    let r = rotation_matrix(&Attitude {
        roll: 0.3,
        ..Attitude::default()
    });
    let v = r * nalgebra::Vector3::new(0.0, 1.0, 0.0);
    assert!((v - nalgebra::Vector3::new(0.0, 0.3f64.cos(), 0.3f64.sin())).amax() < 1e-15);
}

#[test]
fn transition_closed_form() {
    assert_eq!(discretize_transition(0.0), DMatrix::identity(9, 9));
    let f = discretize_transition(1.0);
    for i in 0..3 {
        assert_eq!(f[(i, 3 + i)], 1.0);
        assert_eq!(f[(i, 6 + i)], 0.5);
        assert_eq!(f[(3 + i, 6 + i)], 1.0);
    }
}

#[test]
fn transition_matches_series_exponential() {
    let gen = generator();
    for dt in [0.01, 0.04, 1.0, 10.0] {
        let oracle = expm_series(&(&gen * dt));
        let f = discretize_transition(dt);
        let err = f
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);
        assert!(err < 1e-13, "dt {dt}: {err}");
    }
}

#[test]
fn classic_covariance_coefficients() {
    let (root, q) = process_cov(1.0, 1.0, CovarianceMode::ClassicQderiv).unwrap();
    let coef = [[1.0 / 3.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.0]];
    for a in 0..3 {
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { coef[a][b] } else { 0.0 };
                    assert_eq!(q[(3 * a + i, 3 * b + j)], expect);
                }
            }
        }
    }
    assert_eq!(root.ncols(), 6);
    assert!((&root * root.transpose() - &q).amax() < 1e-14);
}

#[test]
fn classic_covariance_matches_quadrature() {
    for (dt, qs) in [(0.04, 1.0), (1.0, 2.5), (3.0, 0.1)] {
        let (_, q) = process_cov(dt, qs, CovarianceMode::ClassicQderiv).unwrap();
        let oracle = qderiv_quadrature(dt, qs, 10_000);
        let rel = (&q - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "dt {dt}: {rel}");
    }
}

#[test]
fn taylor_covariance_has_rank_three() {
    for dt in [0.04, 1.0] {
        let (root, q) = process_cov(dt, 1.0, CovarianceMode::TaylorRemainder).unwrap();
        assert_eq!(root.shape(), (9, 3));
        let eig = q.symmetric_eigen().eigenvalues;
        let lmax = eig.max();
        let tol = if dt == 1.0 { 1e-12 } else { 1e-12 * lmax };
        assert_eq!(eig.iter().filter(|l| **l > tol).count(), 3, "dt {dt}: {eig:?}");
    }
    let (root, _) = process_cov(2.0, 4.0, CovarianceMode::TaylorRemainder).unwrap();
    let col: Vec<f64> = root.column(0).iter().copied().collect();
    assert_eq!(col, vec![8.0 / 6.0 * 2.0, 0.0, 0.0, 2.0 * 2.0, 0.0, 0.0, 2.0 * 2.0, 0.0, 0.0]);
}

#[test]
fn process_cov_rejects_bad_input() {
    assert!(process_cov(0.0, 1.0, CovarianceMode::TaylorRemainder).is_err());
    assert!(process_cov(1.0, -1.0, CovarianceMode::ClassicQderiv).is_err());
}

#[test]
fn build_without_fixes() {
    let imu = imu_stream(2, 0.04);
    let nav = build_problem(&imu, &[], &NavConfig::default()).unwrap();
    assert_eq!(nav.problem.len(), 2);
    assert!(nav.problem.steps.iter().all(|s| s.meas_dim() == 3));
    assert!(nav.problem.x0.iter().all(|v| *v == 0.0));
}

#[test]
fn identity_attitude_passes_acceleration_through() {
    let imu = imu_stream(5, 0.04);
    let nav = build_problem(&imu, &[], &NavConfig::default()).unwrap();
    for (s, m) in nav.problem.steps.iter().zip(&imu) {
        assert_eq!(s.y.as_slice(), &m.accel_body);
    }
}

#[test]
fn rotated_acceleration_lands_in_world_frame() {
    let mut imu = imu_stream(1, 0.04);
    imu[0].accel_body = [1.0, 0.0, 0.0];
    imu[0].attitude.heading = FRAC_PI_2;
    let nav = build_problem(&imu, &[], &NavConfig::default()).unwrap();
    let y = &nav.problem.steps[0].y;
    assert!((y - DVector::from_column_slice(&[0.0, 1.0, 0.0])).amax() < 1e-15);
}

#[test]
fn fix_steps_carry_position_rows_first() {
    let imu = imu_stream(751, 0.04);
    let fixes: Vec<PositionFix> = (0..=1).map(|i| fix(30.0 * i as f64 + 0.01, [i as f64, 2.0, 3.0])).collect();
    let nav = build_problem(&imu, &fixes, &NavConfig::default()).unwrap();
    assert_eq!(nav.fix_at[0], Some(0));
    assert_eq!(nav.fix_at[750], Some(1));
    assert_eq!(nav.fix_at.iter().flatten().count(), 2);
    let s = &nav.problem.steps[750];
    assert_eq!(s.meas_dim(), 6);
    assert_eq!(s.y[0], 1.0);
    assert_eq!(s.h[(0, 0)], 1.0);
    assert_eq!(s.h[(3, 6)], 1.0);
    assert_eq!(s.rroot[(2, 2)], 2.0);
    assert_eq!(nav.accel_row(750), 3);
    assert!(check_surjectivity(&nav.problem).surjective);
}

#[test]
fn ten_minute_track_counts() {
    let imu = imu_stream(15_000, 0.04);
    let fixes: Vec<PositionFix> = (0..20).map(|i| fix(30.0 * i as f64, [0.0; 3])).collect();
    let nav = build_problem(&imu, &fixes, &NavConfig::default()).unwrap();
    assert_eq!(nav.problem.len(), 15_000);
    let six = nav.problem.steps.iter().filter(|s| s.meas_dim() == 6).count();
    assert_eq!(six, 20);
}

#[test]
fn unalignable_fix_is_a_data_error() {
    let imu = imu_stream(10, 0.04);
    let err = build_problem(&imu, &[fix(0.5, [0.0; 3])], &NavConfig::default()).unwrap_err();
    match err {
        Error::Data(msg) => assert!(msg.contains("0.5"), "{msg}"),
        e => panic!("{e:?}"),
    }
    let err = build_problem(&imu, &[fix(0.0, [0.0; 3]), fix(0.01, [0.0; 3])], &NavConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn bad_streams_rejected() {
    assert!(build_problem(&[], &[], &NavConfig::default()).is_err());
    let mut imu = imu_stream(3, 0.04);
    imu[2].t = imu[1].t;
    assert!(build_problem(&imu, &[], &NavConfig::default()).is_err());
    let imu = imu_stream(3, 0.04);
    let mut f = fix(0.0, [0.0; 3]);
    f.sd[1] = 0.0;
    assert!(build_problem(&imu, &[f], &NavConfig::default()).is_err());
}

#[test]
fn default_acceleration_penalty_scales_deadzone() {
    let cfg = NavConfig {
        r_accel: 0.04,
        deadzone_eps: 0.05,
        ..NavConfig::default()
    };
    let p = cfg.accel_penalty().unwrap();
    // residual 0.05 m/s² is 0.25 noise units, exactly on the deadzone edge
    assert_eq!(p.eval(&[0.25]).unwrap(), 0.0);
    assert!(p.eval(&[0.26]).unwrap() > 0.0);
}

#[test]
fn initial_sd_widens_first_step() {
    let imu = imu_stream(3, 0.04);
    let cfg = NavConfig {
        initial_sd: Some([10.0, 1.0, 0.1]),
        ..NavConfig::default()
    };
    let nav = build_problem(&imu, &[], &cfg).unwrap();
    let s = &nav.problem.steps[0];
    assert_eq!(s.qroot.ncols(), 12);
    assert_eq!(s.qroot[(0, 3)], 10.0);
    assert_eq!(s.qroot[(8, 11)], 0.1);
    assert_eq!(nav.problem.penalties[0].process.len(), 12);
    assert_eq!(nav.problem.steps[1].qroot.ncols(), 3);
}

#[test]
fn slope_initial_state() {
    let x = initial_state(&[fix(0.0, [0.0, 0.0, 0.0]), fix(30.0, [6.0, 8.0, 0.0])]);
    assert_eq!(&x.as_slice()[..3], &[0.0, 0.0, 0.0]);
    let speed = (x[3] * x[3] + x[4] * x[4]).sqrt();
    assert!((speed - 1.0 / 3.0).abs() < 1e-15);
    assert!(x.rows(6, 3).iter().all(|v| *v == 0.0));
}

#[test]
fn single_fix_gives_constant_position_track() {
    let imu = imu_stream(20, 0.04);
    let fixes = [fix(0.0, [1.0, 2.0, 3.0])];
    let nav = build_problem(&imu, &fixes, &NavConfig::default()).unwrap();
    let states = propagate(&nav.problem, &initial_state(&fixes)).unwrap();
    for x in &states {
        assert_eq!(&x.as_slice()[..3], &[1.0, 2.0, 3.0]);
    }
}

#[test]
fn propagation_initialization_is_feasible() {
    let imu = imu_stream(60, 0.04);
    let fixes = [fix(0.0, [0.0; 3]), fix(2.0, [1.0, -1.0, 0.5])];
    let nav = build_problem(&imu, &fixes, &NavConfig::default()).unwrap();
    let asm = assemble(&nav.problem).unwrap();
    let proj = AffineProjector::from_assembled(&asm).unwrap();
    let z = initialize_by_propagation(&nav.problem, &fixes, &proj, &[1.0; 9]).unwrap();
    assert!(proj.infeasibility(&z).unwrap() < 1e-9);

    // the same start in rescaled units maps back to the same propagated track
    let units = nav.units();
    assert_eq!(&units[..], &[100.0, 100.0, 100.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0]);
    let scaled = rescale_states(&nav.problem, &units).unwrap();
    let start = DVector::from_fn(9, |i, _| initial_state(&fixes)[i] / units[i]);
    let mut zs = scaled.z_from_states(&propagate(&scaled, &start).unwrap()).unwrap();
    restore_state_units(&scaled.layout(), &units, zs.as_mut_slice());
    let zp = nav.problem.z_from_states(&propagate(&nav.problem, &initial_state(&fixes)).unwrap()).unwrap();
    assert!((zs - zp).amax() < 1e-12);
}

#[test]
fn bias_augmentation_shapes() {
    let imu = imu_stream(40, 0.04);
    let fixes = [fix(0.0, [0.0; 3]), fix(1.0, [1.0; 3])];
    let nav = build_problem(&imu, &fixes, &NavConfig::default()).unwrap();
    let aug = augment_bias(nav, &[Axis::Z, Axis::X, Axis::Z]).unwrap();
    assert_eq!(aug.bias_axes, vec![Axis::X, Axis::Z]);
    let p = &aug.problem;
    assert_eq!(p.state_dim(), 11);
    let s0 = &p.steps[0];
    assert_eq!(s0.qroot.shape(), (11, 5));
    assert_eq!(s0.qroot[(9, 3)], 1.0);
    assert_eq!(s0.qroot[(10, 4)], 1.0);
    // fix at step 0: acceleration rows start at 3
    assert_eq!(s0.h[(3, 9)], 1.0);
    assert_eq!(s0.h[(5, 10)], 1.0);
    assert_eq!(s0.h[(4, 9)] + s0.h[(4, 10)], 0.0);
    let s1 = &p.steps[1];
    assert_eq!(s1.qroot.shape(), (11, 3));
    assert!(s1.qroot.rows(9, 2).iter().all(|v| *v == 0.0));
    let g = s1.transition.as_ref().unwrap();
    assert_eq!(g[(9, 9)], 1.0);
    assert_eq!(g[(10, 10)], 1.0);
    assert_eq!(s1.h[(0, 9)], 1.0);
    assert!(check_surjectivity(p).surjective);
}

#[test]
fn bias_augmentation_errors() {
    let imu = imu_stream(3, 0.04);
    let nav = build_problem(&imu, &[], &NavConfig::default()).unwrap();
    assert!(matches!(augment_bias(nav.clone(), &[]), Err(Error::Argument(_))));
    let aug = augment_bias(nav, &[Axis::Y]).unwrap();
    assert!(augment_bias(aug, &[Axis::X]).is_err());
}

#[test]
fn classic_mode_freezes_acceleration() {
    // without acceleration noise every feasible point keeps x₀'s acceleration
    let imu = imu_stream(30, 0.04);
    let cfg = NavConfig {
        covariance_mode: CovarianceMode::ClassicQderiv,
        ..NavConfig::default()
    };
    let nav = build_problem(&imu, &[fix(0.0, [0.0; 3])], &cfg).unwrap();
    let asm = assemble(&nav.problem).unwrap();
    let proj = AffineProjector::from_assembled(&asm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eta: Vec<f64> = (0..proj.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = proj.project(&eta).unwrap();
    let layout = nav.problem.layout();
    for x in layout.states(z.as_slice()) {
        assert!(x.rows(6, 3).amax() < 1e-9);
    }
}
