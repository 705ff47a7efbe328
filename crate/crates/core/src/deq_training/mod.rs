//! Deep-equilibrium training of the prior.
//!
//! The loss `1/2 ||x_bar(theta) - x_true||^2` is differentiated through the
//! fixed point `x_bar = T(x_bar; theta)` implicitly: the adjoint
//! `a = (I - J_x^T)^{-1} (x_bar - x_true)` is found by iterating
//! `a <- J_x^T a + (x_bar - x_true)`, and the parameter gradient is
//! `(d T / d theta)^T a`, both from one traced step of `T` at `x_bar`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DmbaError, Result};
use crate::forward_models::{DataFidelity, MeasurementOperator, Observation};
use crate::harness::{mean, EpochRecord, TrainingLog};
use crate::numerics::{Adam, ImageTensor, ParamVector};
use crate::priors::{DenoiserNet, PriorMetadata, TrainingKind};
use crate::solvers::{
    solve_fixed_point, Accelerator, Anderson, DifferentiableMap, FixedPointProblem, SolverConfig, Variant,
    VectorJacobian,
};

/// Relative distance below which a fixed point counts as matching the truth.
pub const MATCH_TOLERANCE: f64 = 1e-13;

/// `1/2 ||x_fixed - x_true||^2`
pub fn deq_loss(x_fixed: &ImageTensor, x_true: &ImageTensor) -> Result<f64> {
    x_fixed.ensure_shape(x_true.shape())?;
    Ok(0.5 * (x_fixed - x_true).norm_sq())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradient {
    pub grad: ParamVector,
    /// `||T(x_bar) - x_bar|| / ||x_bar||`
    pub fixed_point_residual: f64,
    /// `||a - J^T a - v|| / ||v||` with `v = x_bar - x_true`.
    pub adjoint_residual: f64,
    pub adjoint_iterations: usize,
}

/// Gradient of [`deq_loss`] with respect to the parameters of `map`, taken at
/// the (approximate) fixed point `x_fixed`. The adjoint iteration uses the
/// accelerator and stopping rule of `backward`.
pub fn implicit_backward<M: DifferentiableMap + ?Sized>(
    map: &M,
    x_fixed: &ImageTensor,
    x_true: &ImageTensor,
    backward: &SolverConfig,
) -> Result<ImplicitGradient> {
    backward.validate()?;
    x_fixed.ensure_shape(x_true.shape())?;
    let lin = map.linearize(x_fixed)?;
    let fixed_point_residual = (lin.output() - x_fixed).norm() / x_fixed.norm().max(f64::MIN_POSITIVE);
    let v = x_fixed - x_true;
    let v_norm = v.norm();
    if v_norm <= MATCH_TOLERANCE * x_true.norm() {
        // A round-off sized seed carries no descent direction, and Adam would
        // otherwise blow it up to a full-sized step.
        return Ok(ImplicitGradient {
            grad: lin.vjp_params(&ImageTensor::zeros_shape(v.shape()))?,
            fixed_point_residual,
            adjoint_residual: 0.0,
            adjoint_iterations: 0,
        });
    }

    let mut anderson = match backward.accelerator {
        Accelerator::Anderson { memory, relaxation } => Some(Anderson::new(memory, relaxation)),
        _ => None,
    };
    let mut a = v.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..backward.max_iter {
        iterations += 1;
        let fa = &lin.vjp_input(&a)? + &v;
        residual = (&fa - &a).norm() / v_norm;
        if residual <= backward.tol || !residual.is_finite() {
            break;
        }
        a = match &mut anderson {
            Some(acc) => acc.step(a, fa),
            None => fa,
        };
    }
    if !(residual <= backward.tol) {
        return Err(DmbaError::AdjointSolveDiverged {
            iterations,
            residual,
            tol: backward.tol,
        });
    }
    Ok(ImplicitGradient {
        grad: lin.vjp_params(&a)?,
        fixed_point_residual,
        adjoint_residual: residual,
        adjoint_iterations: iterations,
    })
}

/// One training pair: ground truth and the data fidelity built from the
/// training operator and its observation.
#[derive(Debug, Clone)]
pub struct DeqSample {
    pub x_true: ImageTensor,
    pub fidelity: DataFidelity,
}

/// Simulates one observation per image, cycling through `operators`
/// round-robin. Image `i` is measured with `operators[i % operators.len()]`
/// and noise seed `seed + i`.
pub fn round_robin_samples(
    images: &[ImageTensor],
    operators: &[MeasurementOperator],
    noise_level: f64,
    seed: u64,
) -> Result<Vec<DeqSample>> {
    if operators.is_empty() {
        return Err(DmbaError::InvalidArgument("need at least one training operator".into()));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let op = operators[i % operators.len()].clone();
            let obs = op.simulate(x, noise_level, seed.wrapping_add(i as u64))?;
            Ok(DeqSample {
                x_true: x.clone(),
                fidelity: DataFidelity::new(op, obs)?,
            })
        })
        .collect()
}

/// Builds the fixed-point problem for an observation of `train_op`, while
/// recording which operator the trained prior is meant to be deployed with.
pub fn make_mismatched_problem(
    inference_op: &MeasurementOperator,
    train_op: &MeasurementOperator,
    y: Observation,
    net: DenoiserNet,
    variant: Variant,
    gamma: f64,
    tau: f64,
) -> Result<FixedPointProblem> {
    if inference_op.image_shape() != train_op.image_shape() {
        return Err(DmbaError::ShapeMismatch {
            expected: inference_op.image_shape(),
            found: train_op.image_shape(),
        });
    }
    if inference_op != train_op {
        log::info!("training under {train_op} for inference under {inference_op}");
    }
    FixedPointProblem::new(DataFidelity::new(train_op.clone(), y)?, net, gamma, tau, variant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeqTrainConfig {
    /// Descriptor of the training operator(s), stored in the checkpoint.
    pub train_operator: String,
    pub variant: Variant,
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub forward: SolverConfig,
    pub backward: SolverConfig,
    pub rng_seed: u64,
}

impl DeqTrainConfig {
    pub fn new(train_operator: impl Into<String>, variant: Variant, tau: f64) -> Self {
        DeqTrainConfig {
            train_operator: train_operator.into(),
            variant,
            gamma: 1.0,
            tau,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 4,
            forward: SolverConfig::deq_forward(),
            backward: SolverConfig::deq_backward(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(DmbaError::InvalidArgument("batch size must be at least 1".into()));
        }
        self.forward.validate()?;
        self.backward.validate()
    }
}

/// Loss and implicit gradient for one sample under the current weights.
/// `Ok(None)` for the gradient means the adjoint solve diverged.
pub fn sample_gradient(
    sample: &DeqSample,
    net: &DenoiserNet,
    cfg: &DeqTrainConfig,
) -> Result<(f64, Option<ImplicitGradient>)> {
    let problem = FixedPointProblem::new(sample.fidelity.clone(), net.clone(), cfg.gamma, cfg.tau, cfg.variant)?;
    let x0 = sample.fidelity.back_projection();
    let (x_bar, _) = solve_fixed_point(&problem, x0, &cfg.forward, None)?;
    let loss = deq_loss(&x_bar, &sample.x_true)?;
    match implicit_backward(&problem, &x_bar, &sample.x_true, &cfg.backward) {
        Ok(g) => Ok((loss, Some(g))),
        Err(DmbaError::AdjointSolveDiverged { iterations, residual, .. }) => {
            log::warn!("adjoint solve stalled at {residual:.3e} after {iterations} iterations; sample skipped");
            Ok((loss, None))
        }
        Err(e) => Err(e),
    }
}

/// Trains `init` so the fixed points of the reconstruction operator built from
/// each sample match its ground truth. Samples are visited in a fresh seeded
/// order every epoch; each batch contributes the mean implicit gradient of
/// its non-skipped samples to one Adam step.
pub fn train_deq(samples: &[DeqSample], init: &DenoiserNet, cfg: &DeqTrainConfig) -> Result<(DenoiserNet, TrainingLog)> {
    cfg.validate()?;
    let mut net = init.clone();
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((net, log));
    }
    if samples.is_empty() {
        return Err(DmbaError::InvalidArgument("no training samples".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate, net.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(samples.len());
        let mut skipped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut total = net.params().zeros_like();
            let mut used = 0usize;
            for &i in batch {
                let (loss, grad) = sample_gradient(&samples[i], &net, cfg)?;
                losses.push(loss);
                match grad {
                    Some(g) => {
                        total.add_scaled(1.0, &g.grad)?;
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
            if used > 0 {
                total.scale_in_place(1.0 / used as f64);
                adam.step(net.params_mut(), &total)?;
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: mean(&losses),
            skipped,
        };
        log::info!(
            "deq epoch {epoch}: mean loss {:.6e}, skipped {skipped}",
            record.mean_loss
        );
        log.epochs.push(record);
    }

    net.metadata = PriorMetadata {
        kind: TrainingKind::Deq {
            train_operator: cfg.train_operator.clone(),
            tau: cfg.tau,
        },
        seed: cfg.rng_seed,
    };
    Ok((net, log))
}

#[cfg(test)]
mod tests;
