use super::*;
use crate::forward_models::{MeasurementOperator, MriOperator};
use crate::harness::fixtures::{contractive_mri_problem, random_mask, smooth_image};
use crate::numerics::Shape;
use crate::priors::Architecture;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_net() -> DenoiserNet {
    DenoiserNet::zeros(Architecture::default()).unwrap()
}

fn full_fidelity(y_image: &ImageTensor) -> DataFidelity {
    let op = MeasurementOperator::from(MriOperator::full(y_image.height(), y_image.width()));
    let obs = op.simulate(y_image, 0.0, 0).unwrap();
    DataFidelity::new(op, obs).unwrap()
}

fn masked_fidelity(x_true: &ImageTensor, seed: u64) -> DataFidelity {
    let op = MeasurementOperator::from(random_mask(x_true.height(), x_true.width(), 0.4, seed));
    let obs = op.simulate(x_true, 0.01, seed).unwrap();
    DataFidelity::new(op, obs).unwrap()
}

fn random_net(seed: u64) -> DenoiserNet {
    let arch = Architecture {
        depth: 3,
        width: 6,
        ..Architecture::default()
    };
    DenoiserNet::kaiming(arch, seed).unwrap()
}

fn plain(max_iter: usize, tol: f64) -> SolverConfig {
    SolverConfig::new(max_iter, tol, Accelerator::None)
}

#[test]
fn sd_red_identity_prior_and_exact_data_is_fixed() {
    let x = smooth_image(8, 8, 1);
    let p = FixedPointProblem::new(full_fidelity(&x), identity_net(), 1.0, 0.3, Variant::SdRed).unwrap();
    assert!(p.step_sd_red(&x).unwrap().max_abs_diff(&x) < 1e-15);
    assert!(p.gradient_balance_residual(&x).unwrap() < 1e-15);
}

#[test]
fn sd_red_identity_prior_is_gradient_descent() {
    let x_true = smooth_image(10, 10, 2);
    let df = masked_fidelity(&x_true, 3);
    let x = smooth_image(10, 10, 4);
    let p = FixedPointProblem::new(df.clone(), identity_net(), 0.7, 0.3, Variant::SdRed).unwrap();
    let expected = x.axpby(1.0, &df.gradient(&x).unwrap(), -0.7);
    assert_eq!(p.step_sd_red(&x).unwrap(), expected);
}

#[test]
fn sd_red_step_is_compositional() {
    let x_true = smooth_image(12, 12, 5);
    let df = masked_fidelity(&x_true, 6);
    let net = random_net(7);
    let x = smooth_image(12, 12, 8);
    let (gamma, tau) = (0.9, 0.4);
    let p = FixedPointProblem::new(df.clone(), net.clone(), gamma, tau, Variant::SdRed).unwrap();
    let grad = df.gradient(&x).unwrap();
    let r = net.residual(&x).unwrap();
    let expected = x.axpby(1.0, &grad.axpby(1.0, &r, tau), -gamma);
    assert_eq!(p.step_sd_red(&x).unwrap(), expected);
    assert!(p.step_pnp_pgm(&x).is_err());
}

#[test]
fn pnp_identity_prior_with_zero_data_shrinks() {
    let zero = ImageTensor::zeros(6, 6);
    let x = smooth_image(6, 6, 9);
    let gamma = 0.8;
    let p = FixedPointProblem::new(full_fidelity(&zero), identity_net(), gamma, 0.5, Variant::PnpPgm).unwrap();
    assert!(p.step_pnp_pgm(&x).unwrap().max_abs_diff(&x.scale(1.0 / (1.0 + gamma))) < 1e-14);
}

#[test]
fn pnp_vanishing_tau_is_prox() {
    let x_true = smooth_image(10, 10, 10);
    let df = masked_fidelity(&x_true, 11);
    let x = smooth_image(10, 10, 12);
    let p = FixedPointProblem::new(df.clone(), random_net(13), 1.0, 1e-12, Variant::PnpPgm).unwrap();
    let direct = df.prox(&x, 1.0).unwrap();
    assert!(p.step_pnp_pgm(&x).unwrap().max_abs_diff(&direct) < 1e-8);
}

#[test]
fn pnp_step_is_compositional() {
    let x_true = smooth_image(12, 12, 14);
    let df = masked_fidelity(&x_true, 15);
    let net = random_net(16);
    let x = smooth_image(12, 12, 17);
    let (gamma, tau) = (0.6, 0.7);
    let p = FixedPointProblem::new(df.clone(), net.clone(), gamma, tau, Variant::PnpPgm).unwrap();
    let r = net.residual(&x).unwrap();
    let expected = df.prox(&x.axpby(1.0, &r, -gamma * tau), gamma).unwrap();
    assert_eq!(p.step_pnp_pgm(&x).unwrap(), expected);
}

#[test]
fn problem_rejects_bad_parameters_and_shapes() {
    let x = smooth_image(6, 6, 18);
    assert!(matches!(
        FixedPointProblem::new(full_fidelity(&x), identity_net(), 0.0, 1.0, Variant::SdRed),
        Err(DmbaError::NonPositiveGamma(_))
    ));
    assert!(FixedPointProblem::new(full_fidelity(&x), identity_net(), 1.0, -1.0, Variant::SdRed).is_err());
    let p = FixedPointProblem::new(full_fidelity(&x), identity_net(), 1.0, 1.0, Variant::SdRed).unwrap();
    assert!(matches!(
        p.step(&ImageTensor::zeros(5, 6)),
        Err(DmbaError::ShapeMismatch { .. })
    ));
}

#[test]
fn traced_step_matches_untraced() {
    for variant in [Variant::SdRed, Variant::PnpPgm] {
        let x_true = smooth_image(10, 10, 19);
        let p = FixedPointProblem::new(masked_fidelity(&x_true, 20), random_net(21), 0.9, 0.5, variant).unwrap();
        let x = smooth_image(10, 10, 22);
        let lin = p.linearize(&x).unwrap();
        assert!(lin.output().max_abs_diff(&p.step(&x).unwrap()) < 1e-12, "{variant}");
    }
}

#[test]
fn traced_step_input_vjp_matches_finite_differences() {
    for variant in [Variant::SdRed, Variant::PnpPgm] {
        let x_true = smooth_image(8, 8, 23);
        let p = FixedPointProblem::new(masked_fidelity(&x_true, 24), random_net(25), 1.0, 0.5, variant).unwrap();
        let x = smooth_image(8, 8, 26);
        let seed = smooth_image(8, 8, 27);
        let lin = p.linearize(&x).unwrap();
        let g = lin.vjp_input(&seed).unwrap();
        let eps = 1e-6;
        let mut fd = ImageTensor::zeros(8, 8);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let diff = &p.step(&xp).unwrap() - &p.step(&xm).unwrap();
            fd.data_mut()[i] = diff.dot(&seed) / (2.0 * eps);
        }
        let rel = (&g - &fd).norm() / fd.norm();
        assert!(rel < 1e-5, "{variant}: {rel}");
    }
}

fn scalar(v: f64) -> ImageTensor {
    ImageTensor::filled(1, 1, v)
}

#[test]
fn scalar_map_converges_and_anderson_is_no_slower() {
    let map = |x: &ImageTensor| Ok(x.map(|v| 0.5 * v + 1.0));
    let cfg = plain(200, 1e-10);
    let (x, trace) = solve_fixed_point(&map, &scalar(0.3), &cfg, None).unwrap();
    assert!(trace.converged);
    assert!((x.data()[0] - 2.0).abs() < 1e-8);
    let acfg = SolverConfig::new(200, 1e-10, Accelerator::anderson_default());
    let (xa, atrace) = solve_fixed_point(&map, &scalar(0.3), &acfg, None).unwrap();
    assert!(atrace.converged);
    assert!((xa.data()[0] - 2.0).abs() < 1e-8);
    assert!(atrace.iterations <= trace.iterations, "{} vs {}", atrace.iterations, trace.iterations);
}

#[test]
fn fixed_start_returns_after_one_iteration() {
    let map = |x: &ImageTensor| Ok(x.map(|v| 0.5 * v + 1.0));
    let (x, trace) = solve_fixed_point(&map, &scalar(2.0), &plain(10, 1e-12), None).unwrap();
    assert_eq!(x, scalar(2.0));
    assert!(trace.converged);
    assert_eq!(trace.iterations, 1);
}

#[test]
fn non_convergence_is_a_status() {
    let map = |x: &ImageTensor| Ok(x.map(|v| 0.99 * v + 1.0));
    let (_, trace) = solve_fixed_point(&map, &scalar(0.0), &plain(5, 1e-12), None).unwrap();
    assert!(!trace.converged);
    assert_eq!(trace.iterations, 5);
    assert!(trace.records.len() <= 5);
    let diverging = |x: &ImageTensor| Ok(x.map(|v| 1e300 * v + 1.0));
    let (_, trace) = solve_fixed_point(&diverging, &scalar(1.0), &plain(50, 1e-6), None).unwrap();
    assert!(!trace.converged);
    assert!(trace.iterations < 50);
}

#[test]
fn config_validation() {
    let map = |x: &ImageTensor| Ok(x.clone());
    assert!(solve_fixed_point(&map, &scalar(1.0), &plain(10, 0.0), None).is_err());
    let bad = SolverConfig::new(
        10,
        1e-3,
        Accelerator::Anderson {
            memory: 0,
            relaxation: 1.0,
        },
    );
    assert!(solve_fixed_point(&map, &scalar(1.0), &bad, None).is_err());
}

#[test]
fn anderson_memory_one_is_plain_step() {
    let x = smooth_image(4, 4, 28);
    let fx = x.map(|v| v * 0.3 + 0.2);
    let older = (x.scale(2.0), fx.scale(0.5));
    let out = anderson_update(&[older, (x.clone(), fx.clone())], 1, 1.0);
    assert_eq!(out, fx);
}

#[test]
fn anderson_falls_back_on_singular_history() {
    let x = smooth_image(4, 4, 29);
    let out = anderson_update(&[(x.clone(), x.clone()), (x.clone(), x.clone())], 5, 1.0);
    assert_eq!(out, x);
}

fn affine_system(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let norm = raw.clone().svd(false, false).singular_values.max();
    let b = raw * (0.9 / norm);
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    (b, c)
}

#[test]
fn anderson_solves_affine_map() {
    let n = 8;
    let (b, c) = affine_system(n, 30);
    let exact = (DMatrix::identity(n, n) - &b).lu().solve(&c).unwrap();
    let map = |x: &ImageTensor| {
        let v = &b * DVector::from_column_slice(x.data()) + &c;
        ImageTensor::from_vec(1, n, v.as_slice().to_vec())
    };
    let x0 = ImageTensor::filled(1, n, 0.1);
    let cfg = SolverConfig::new(500, 1e-12, Accelerator::anderson_default());
    let (x, trace) = solve_fixed_point(&map, &x0, &cfg, None).unwrap();
    assert!(trace.converged);
    let err = x.data().iter().zip(exact.iter()).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "max error {err}");
    let (_, plain_trace) = solve_fixed_point(&map, &x0, &plain(2000, 1e-12), None).unwrap();
    assert!(trace.iterations <= plain_trace.iterations);
}

#[test]
fn nesterov_basic_cases() {
    let current = smooth_image(3, 3, 31);
    let previous = smooth_image(3, 3, 32);
    assert_eq!(nesterov_update(&current, &previous, 1), current);
    for k in 1..10 {
        assert_eq!(nesterov_update(&current, &current, k), current);
    }
    let w = 3.0 / 6.0;
    let expected = current.zip_map(&previous, |c, p| c + w * (c - p));
    assert!(nesterov_update(&current, &previous, 4).max_abs_diff(&expected) < 1e-15);
}

#[test]
fn nesterov_beats_plain_descent_on_quadratic() {
    // f(x) = 1/2 sum_i l_i x_i^2 with condition number 100.
    let n = 8;
    let lambdas: Vec<f64> = (0..n).map(|i| 0.01 + 0.99 * i as f64 / (n - 1) as f64).collect();
    let f = |x: &ImageTensor| 0.5 * x.data().iter().zip(&lambdas).map(|(v, l)| l * v * v).sum::<f64>();
    let step = |x: &ImageTensor| {
        let d: Vec<f64> = x.data().iter().zip(&lambdas).map(|(v, l)| v - l * v).collect();
        ImageTensor::from_vec(1, n, d).unwrap()
    };
    let x0 = ImageTensor::filled(1, n, 1.0);

    let count_plain = {
        let mut x = x0.clone();
        let mut k = 0;
        while f(&x) > 1e-6 {
            x = step(&x);
            k += 1;
        }
        k
    };
    let count_nesterov = {
        let (mut x, mut prev, mut z) = (x0.clone(), x0.clone(), x0.clone());
        let mut k = 0;
        while f(&x) > 1e-6 {
            k += 1;
            x = step(&z);
            z = nesterov_update(&x, &prev, k);
            prev = x.clone();
        }
        k
    };
    assert!(count_nesterov < count_plain, "{count_nesterov} vs {count_plain}");
}

#[test]
fn variants_share_fixed_points() {
    for (seed, variant) in [(40, Variant::SdRed), (41, Variant::PnpPgm)] {
        let (p, _) = contractive_mri_problem(16, 0.4, seed, variant).unwrap();
        let x0 = p.data_fidelity().back_projection().clone();
        let (x, trace) = solve_fixed_point(&p, &x0, &plain(500, 1e-8), None).unwrap();
        assert!(trace.converged, "{variant}");
        let balance = p.gradient_balance_residual(&x).unwrap();
        assert!(balance <= 1e-7, "{variant}: {balance}");
        let other = p.with_variant(match variant {
            Variant::SdRed => Variant::PnpPgm,
            Variant::PnpPgm => Variant::SdRed,
        });
        let moved = (&other.step(&x).unwrap() - &x).norm() / x.norm();
        assert!(moved < 1e-6, "{variant}: {moved}");
    }
}

#[test]
fn accelerators_agree_with_plain_iteration() {
    let (p, x_true) = contractive_mri_problem(16, 0.3, 50, Variant::PnpPgm).unwrap();
    let x0 = p.data_fidelity().back_projection().clone();
    let tol = 1e-6;
    let (xp, tp) = solve_fixed_point(&p, &x0, &plain(500, tol), Some(&x_true)).unwrap();
    for acc in [Accelerator::Nesterov, Accelerator::anderson_default()] {
        let (xa, ta) = solve_fixed_point(&p, &x0, &SolverConfig::new(500, tol, acc), Some(&x_true)).unwrap();
        assert!(ta.converged && tp.converged, "{acc:?}");
        let rel = (&xa - &xp).norm() / xp.norm();
        assert!(rel < 10.0 * tol, "{acc:?}: {rel}");
        assert!(ta.records.iter().all(|r| r.psnr.is_some() && r.objective.is_some()));
    }
}

#[test]
fn solve_is_deterministic_and_exports_csv() {
    let (p, x_true) = contractive_mri_problem(12, 0.4, 60, Variant::PnpPgm).unwrap();
    let x0 = p.data_fidelity().back_projection().clone();
    let cfg = SolverConfig::inference();
    let (a, ta) = solve_fixed_point(&p, &x0, &cfg, Some(&x_true)).unwrap();
    let (b, tb) = solve_fixed_point(&p, &x0, &cfg, Some(&x_true)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert!(ta.converged && ta.final_residual() <= cfg.tol);
    assert_eq!(ta.residual_at(1), Some(ta.records[0].residual));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    ta.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,residual,psnr_db"));
    assert_eq!(lines.count(), ta.records.len());
    assert_eq!(x0.shape(), Shape::image(12, 12));
}
