use super::*;
use crate::forward_models::MriOperator;
use crate::harness::fixtures::{contractive_mri_problem, random_mask, scaled_net, smooth_image, tiny_arch};
use crate::numerics::ParamBlock;
use crate::solvers::FixedPointMap;

#[test]
fn loss_cases() {
    let x = smooth_image(5, 5, 1);
    assert_eq!(deq_loss(&x, &x).unwrap(), 0.0);
    assert_eq!(
        deq_loss(&ImageTensor::filled(2, 2, 1.0), &ImageTensor::zeros(2, 2)).unwrap(),
        2.0
    );
    let y = smooth_image(5, 5, 2);
    let direct: f64 = x.data().iter().zip(y.data()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    assert!((deq_loss(&x, &y).unwrap() - direct).abs() < 1e-14);
    assert!(deq_loss(&x, &ImageTensor::zeros(4, 5)).is_err());
}

/// `T(x; theta) = theta x + c` on a single pixel.
struct ScalarAffine {
    theta: f64,
    c: f64,
}

struct ScalarLinear {
    theta: f64,
    x: f64,
    out: ImageTensor,
}

impl FixedPointMap for ScalarAffine {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(x.map(|v| self.theta * v + self.c))
    }
}

impl VectorJacobian for ScalarLinear {
    fn output(&self) -> &ImageTensor {
        &self.out
    }

    fn vjp_input(&self, seed: &ImageTensor) -> Result<ImageTensor> {
        Ok(seed.scale(self.theta))
    }

    fn vjp_params(&self, seed: &ImageTensor) -> Result<ParamVector> {
        let mut p = ParamVector::new();
        p.push(ParamBlock::new("theta", vec![1], vec![self.x * seed.data()[0]])?)?;
        Ok(p)
    }
}

impl DifferentiableMap for ScalarAffine {
    type Linear = ScalarLinear;

    fn linearize(&self, x: &ImageTensor) -> Result<ScalarLinear> {
        Ok(ScalarLinear {
            theta: self.theta,
            x: x.data()[0],
            out: self.apply(x)?,
        })
    }
}

#[test]
fn scalar_implicit_gradient_matches_closed_form() {
    let tight = SolverConfig::new(200, 1e-13, Accelerator::anderson_default());
    for (theta, c, target) in [(0.6, 0.8, 1.5), (-0.7, 0.3, -0.2), (0.95, 0.05, 0.0)] {
        let map = ScalarAffine { theta, c };
        let (x_bar, trace) = solve_fixed_point(&map, &ImageTensor::filled(1, 1, 0.1), &tight, None).unwrap();
        assert!(trace.converged);
        let xb = c / (1.0 - theta);
        assert!((x_bar.data()[0] - xb).abs() < 1e-10);
        let g = implicit_backward(&map, &x_bar, &ImageTensor::filled(1, 1, target), &tight).unwrap();
        let expected = (xb - target) * c / (1.0 - theta).powi(2);
        let got = g.grad.flatten()[0];
        assert!((got - expected).abs() < 1e-8, "theta {theta}: {got} vs {expected}");
        assert!(g.adjoint_residual <= tight.tol);
    }
}

#[test]
fn adjoint_divergence_is_reported() {
    let map = ScalarAffine { theta: 1.5, c: 1.0 };
    let x_bar = ImageTensor::filled(1, 1, -2.0);
    let cfg = SolverConfig::new(20, 1e-6, Accelerator::None);
    assert!(matches!(
        implicit_backward(&map, &x_bar, &ImageTensor::filled(1, 1, 0.0), &cfg),
        Err(DmbaError::AdjointSolveDiverged { .. })
    ));
}

#[test]
fn zero_seed_gives_exactly_zero_gradient() {
    let (p, _) = contractive_mri_problem(8, 0.5, 3, Variant::SdRed).unwrap();
    let x = smooth_image(8, 8, 4);
    let g = implicit_backward(&p, &x, &x, &SolverConfig::deq_backward()).unwrap();
    assert!(g.grad.iter().all(|&v| v == 0.0));
    assert_eq!(g.adjoint_residual, 0.0);
}

fn pipeline_loss(p: &FixedPointProblem, params: &ParamVector, x_true: &ImageTensor, cfg: &SolverConfig) -> f64 {
    let net = DenoiserNet::from_params(p.net().architecture(), params.clone(), PriorMetadata::default()).unwrap();
    let probe = FixedPointProblem::new(p.data_fidelity().clone(), net, p.gamma(), p.tau(), p.variant()).unwrap();
    let (x_bar, trace) = solve_fixed_point(&probe, probe.data_fidelity().back_projection(), cfg, None).unwrap();
    assert!(trace.converged);
    deq_loss(&x_bar, x_true).unwrap()
}

#[test]
fn implicit_gradient_matches_pipeline_finite_differences() {
    for (seed, variant) in [(10, Variant::SdRed), (11, Variant::PnpPgm)] {
        let (p, x_true) = contractive_mri_problem(8, 0.5, seed, variant).unwrap();
        assert!(p.net().params().total_len() <= 200);
        let forward = SolverConfig::new(500, 1e-10, Accelerator::anderson_default());
        let backward = SolverConfig::new(500, 1e-12, Accelerator::anderson_default());
        let (x_bar, trace) = solve_fixed_point(&p, p.data_fidelity().back_projection(), &forward, None).unwrap();
        assert!(trace.converged);
        let g = implicit_backward(&p, &x_bar, &x_true, &backward).unwrap();
        let fd = crate::numerics::finite_difference_gradient(
            |params| pipeline_loss(&p, params, &x_true, &forward),
            p.net().params(),
            1e-5,
        );
        let rel = g.grad.relative_error(&fd).unwrap();
        assert!(rel < 1e-3, "{variant}: relative error {rel}");
    }
}

fn tiny_samples(n: usize, seed: u64) -> Vec<DeqSample> {
    let images: Vec<ImageTensor> = (0..n).map(|i| smooth_image(8, 8, seed + i as u64)).collect();
    let ops = [MeasurementOperator::from(random_mask(8, 8, 0.5, seed))];
    round_robin_samples(&images, &ops, 0.01, seed).unwrap()
}

fn tiny_config(epochs: usize) -> DeqTrainConfig {
    DeqTrainConfig {
        learning_rate: 2e-3,
        epochs,
        batch_size: 2,
        tau: 0.5,
        forward: SolverConfig::new(200, 1e-8, Accelerator::anderson_default()),
        backward: SolverConfig::new(200, 1e-8, Accelerator::anderson_default()),
        ..DeqTrainConfig::new("mri:test", Variant::SdRed, 0.5)
    }
}

#[test]
fn zero_epochs_returns_init() {
    let init = scaled_net(tiny_arch(), 5, 0.5).unwrap();
    let (net, log) = train_deq(&tiny_samples(2, 6), &init, &tiny_config(0)).unwrap();
    assert_eq!(net, init);
    assert!(log.epochs.is_empty());
}

#[test]
fn optimal_init_stays_optimal() {
    // D = id with A = I and clean data: the fixed point is the truth.
    let x = smooth_image(6, 6, 7);
    let op = MeasurementOperator::from(MriOperator::full(6, 6));
    let obs = op.simulate(&x, 0.0, 0).unwrap();
    let sample = DeqSample {
        x_true: x,
        fidelity: DataFidelity::new(op, obs).unwrap(),
    };
    let init = DenoiserNet::zeros(crate::priors::Architecture {
        residual: true,
        ..tiny_arch()
    })
    .unwrap();
    let (_, log) = train_deq(&[sample], &init, &tiny_config(5)).unwrap();
    for w in log.epochs.windows(2) {
        assert!(w[1].mean_loss <= w[0].mean_loss, "{log:?}");
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let samples = tiny_samples(4, 8);
    let init = scaled_net(tiny_arch(), 9, 0.5).unwrap();
    let cfg = tiny_config(15);
    let (net, log) = train_deq(&samples, &init, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 15);
    assert!(log.last_loss().unwrap() < log.first_loss().unwrap(), "{log:?}");
    assert_eq!(log.total_skipped(), 0);
    assert!(matches!(net.metadata.kind, TrainingKind::Deq { .. }));
    let (net2, log2) = train_deq(&samples, &init, &cfg).unwrap();
    assert_eq!(net, net2);
    assert_eq!(log, log2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    log.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,mean_loss,skipped\n"));
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn mismatched_problem_uses_training_operator() {
    let x = smooth_image(8, 8, 12);
    let train = MeasurementOperator::from(random_mask(8, 8, 0.3, 13));
    let infer = MeasurementOperator::from(random_mask(8, 8, 0.6, 14));
    let obs = train.simulate(&x, 0.01, 15).unwrap();
    let net = scaled_net(tiny_arch(), 16, 0.5).unwrap();
    let p = make_mismatched_problem(&infer, &train, obs.clone(), net.clone(), Variant::SdRed, 1.0, 0.5).unwrap();
    assert_eq!(p.data_fidelity().operator(), &train);
    let matched = make_mismatched_problem(&train, &train, obs.clone(), net.clone(), Variant::SdRed, 1.0, 0.5).unwrap();
    let direct = FixedPointProblem::new(DataFidelity::new(train.clone(), obs.clone()).unwrap(), net.clone(), 1.0, 0.5, Variant::SdRed).unwrap();
    assert_eq!(matched.step(&x).unwrap(), direct.step(&x).unwrap());
    let other = MeasurementOperator::from(random_mask(6, 6, 0.5, 17));
    assert!(matches!(
        make_mismatched_problem(&other, &train, obs, net, Variant::SdRed, 1.0, 0.5),
        Err(DmbaError::ShapeMismatch { .. })
    ));
}

#[test]
fn round_robin_assignment() {
    let images: Vec<ImageTensor> = (0..5).map(|i| smooth_image(8, 8, i)).collect();
    let ops = [
        MeasurementOperator::from(random_mask(8, 8, 0.3, 1)),
        MeasurementOperator::from(random_mask(8, 8, 0.6, 2)),
    ];
    let samples = round_robin_samples(&images, &ops, 0.0, 0).unwrap();
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.fidelity.operator(), &ops[i % 2]);
    }
    assert!(round_robin_samples(&images, &[], 0.0, 0).is_err());
}
