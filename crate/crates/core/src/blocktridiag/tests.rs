use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::plq::Penalty;
use crate::sim::{random_model, RandomModelSpec};
use crate::statespace::{assemble, check_surjectivity, SmoothingProblem, StepModel};

fn scalar_blocks(a: &[f64], b: &[f64]) -> BlockTridiagonal {
    BlockTridiagonal {
        diag: a.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
        sub: b.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
    }
}

fn random_assembled(rng: &mut ChaCha8Rng, steps: usize, n: usize, m: usize) -> (SmoothingProblem, Assembled) {
    let model = random_model(rng, RandomModelSpec::nonsingular(steps, n, m));
    let q = Penalty::quadratic(0.5).unwrap();
    let p = SmoothingProblem::with_uniform_penalties(model.x0, model.steps, &q, &q, &Penalty::zero()).unwrap();
    let asm = assemble(&p).unwrap();
    (p, asm)
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn identity_blocks() {
    let t = BlockTridiagonal {
        diag: vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
        sub: vec![DMatrix::zeros(3, 2)],
    };
    let l = factor(&t).unwrap();
    assert_eq!(l.to_dense(), DMatrix::<f64>::identity(5, 5));
    let rhs = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(l.solve(&rhs).unwrap().as_slice(), &rhs);
}

#[test]
fn toy_normal_matrix() {
    let step = StepModel::new(
        None,
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
    );
    let q = Penalty::quadratic(0.5).unwrap();
    let p = SmoothingProblem::with_uniform_penalties(DVector::zeros(1), vec![step], &q, &q, &q).unwrap();
    let t = normal_matrix(&assemble(&p).unwrap().a);
    assert_eq!(t.diag.len(), 1);
    assert!(t.sub.is_empty());
    assert_eq!(t.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
}

#[test]
fn scalar_block_factor_and_solve() {
    let t = scalar_blocks(&[2.0, 3.0], &[1.0]);
    let l = factor(&t).unwrap();
    assert!((l.diag[0][(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
    assert!((l.diag[1][(0, 0)] - 2.5f64.sqrt()).abs() < 1e-15);
    assert!((l.sub[0][(0, 0)] - 0.5f64.sqrt()).abs() < 1e-15);
    let nu = l.solve(&[1.0, 0.0]).unwrap();
    assert!((nu[0] - 0.6).abs() < 1e-15 && (nu[1] + 0.2).abs() < 1e-15);
}

#[test]
fn blockwise_normal_matrix_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (steps, n, m) in [(1, 1, 1), (4, 2, 1), (7, 3, 2), (5, 3, 0)] {
        let (_, asm) = random_assembled(&mut rng, steps, n, m);
        let dense = asm.a.to_dense();
        let t = normal_matrix(&asm.a);
        assert!((t.to_dense() - &dense * dense.transpose()).amax() < 1e-12);
    }
}

#[test]
fn factor_reproduces_normal_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let (_, asm) = random_assembled(&mut rng, 50, 3, 2);
        let t = normal_matrix(&asm.a);
        let l = factor(&t).unwrap();
        let dense_l = l.to_dense();
        assert!(rel_frobenius(&(&dense_l * dense_l.transpose()), &t.to_dense()) < 1e-10);
        for c in &l.diag {
            assert!(c.diagonal().iter().all(|v| *v > 0.0));
            assert!(c.upper_triangle().iter().zip(c.iter()).all(|(u, v)| u == v || *u == 0.0));
        }
        let rhs = DVector::from_fn(t.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let nu = l.solve(rhs.as_slice()).unwrap();
        let resid = (t.to_dense() * nu - &rhs).norm() / rhs.norm();
        assert!(resid < 1e-9, "{resid}");
    }
}

#[test]
fn heterogeneous_block_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut p, _) = random_assembled(&mut rng, 6, 3, 2);
    // strip measurements from alternate steps
    for s in p.steps.iter_mut().step_by(2) {
        s.h = DMatrix::zeros(0, 3);
        s.rroot = DMatrix::zeros(0, s.meas_cols());
        s.y = DVector::zeros(0);
    }
    let asm = assemble(&p).unwrap();
    let t = normal_matrix(&asm.a);
    let l = factor(&t).unwrap();
    let dense_l = l.to_dense();
    assert!(rel_frobenius(&(&dense_l * dense_l.transpose()), &t.to_dense()) < 1e-10);
}

#[test]
fn failure_iff_not_surjective() {
    let good = StepModel::new(
        Some(DMatrix::identity(2, 2)),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DVector::zeros(2),
    );
    let mut bad = good.clone();
    bad.qroot = DMatrix::zeros(2, 0);
    bad.rroot = DMatrix::zeros(2, 0);
    let zero = Penalty::zero();
    let p = SmoothingProblem::with_uniform_penalties(DVector::zeros(2), vec![bad.clone(), good.clone()], &zero, &zero, &zero).unwrap();
    assert!(!check_surjectivity(&p).surjective);
    let err = factor(&normal_matrix(&assemble(&p).unwrap().a)).unwrap_err();
    assert!(matches!(err, Error::NotSurjective { step: 1 }), "{err}");

    let p = SmoothingProblem::with_uniform_penalties(DVector::zeros(2), vec![good.clone(), good.clone()], &zero, &zero, &zero).unwrap();
    assert!(check_surjectivity(&p).surjective);
    assert!(factor(&normal_matrix(&assemble(&p).unwrap().a)).is_ok());

    // A deficient block after a step with slack leaves A itself full row
    // rank: the per-block test is sufficient, not necessary.
    let p = SmoothingProblem::with_uniform_penalties(DVector::zeros(2), vec![good, bad], &zero, &zero, &zero).unwrap();
    assert!(!check_surjectivity(&p).surjective);
    let dense = assemble(&p).unwrap().a.to_dense();
    assert!(dense.singular_values().min() > 1e-8);
    assert!(factor(&normal_matrix(&assemble(&p).unwrap().a)).is_ok());
}

#[test]
fn projection_onto_line() {
    // A = [1 1], ŵ = 1
    let step = StepModel::new(
        None,
        DMatrix::zeros(0, 1),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
    );
    let zero = Penalty::zero();
    let p = SmoothingProblem::with_uniform_penalties(DVector::from_element(1, 1.0), vec![step], &zero, &zero, &zero).unwrap();
    let proj = AffineProjector::from_assembled(&assemble(&p).unwrap()).unwrap();
    let z = proj.project(&[0.0, 0.0]).unwrap();
    assert!((z[0] - 0.5).abs() < 1e-15 && (z[1] - 0.5).abs() < 1e-15);
    let feasible = [0.25, 0.75];
    let z = proj.project(&feasible).unwrap();
    assert!((z[0] - 0.25).abs() < 1e-15 && (z[1] - 0.75).abs() < 1e-15);
}

#[test]
fn projection_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let (_, asm) = random_assembled(&mut rng, 8, 3, 2);
        let proj = AffineProjector::from_assembled(&asm).unwrap();
        let dense = asm.a.to_dense();
        let aat = &dense * dense.transpose();
        let eta = DVector::from_fn(dense.ncols(), |_, _| rng.gen_range(-3.0..3.0));
        let want = &eta - dense.transpose() * aat.lu().solve(&(&dense * &eta - &asm.w)).unwrap();
        let z = proj.project(eta.as_slice()).unwrap();
        assert!((&z - &want).amax() < 1e-9);
        assert!(proj.infeasibility(z.as_slice()).unwrap() < 1e-9);

        // idempotent
        let zz = proj.project(z.as_slice()).unwrap();
        assert!((&zz - &z).amax() < 1e-10);

        // η − z ⟂ null(A)
        let svd = dense.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-10).count();
        let null = vt.rows(rank, vt.nrows() - rank).transpose();
        let diff = &eta - &z;
        for _ in 0..100 {
            let c = DVector::from_fn(null.ncols(), |_, _| rng.gen_range(-1.0..1.0));
            let v = &null * c;
            assert!(diff.dot(&v).abs() < 1e-9);
        }
    }
}

#[test]
fn null_component_annihilates_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, asm) = random_assembled(&mut rng, 5, 2, 1);
    let proj = AffineProjector::from_assembled(&asm).unwrap();
    let v = DVector::from_fn(asm.a.nrows(), |_, _| rng.gen_range(-1.0..1.0));
    let in_range = asm.a.apply_transpose(v.as_slice()).unwrap();
    assert!(proj.null_component(in_range.as_slice()).unwrap().amax() < 1e-10);
}

#[test]
fn projector_factors_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (_, asm) = random_assembled(&mut rng, 10, 2, 1);
    let before = factor_calls();
    let proj = AffineProjector::from_assembled(&asm).unwrap();
    for _ in 0..20 {
        let eta = DVector::from_fn(asm.a.ncols(), |_, _| rng.gen_range(-1.0..1.0));
        proj.project(eta.as_slice()).unwrap();
    }
    assert_eq!(factor_calls() - before, 1);
}

#[test]
fn solve_dimension_checked() {
    let l = factor(&scalar_blocks(&[2.0, 3.0], &[1.0])).unwrap();
    assert!(l.solve(&[1.0]).is_err());
}
