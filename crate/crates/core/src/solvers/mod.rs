//! Fixed-point reconstruction with a CNN prior.
//!
//! Two update rules share the same fixed points for least-squares data
//! fidelity `g`:
//!
//! * SD-RED: `T(x) = x - gamma (grad g(x) + tau (x - D(x)))`
//! * PnP-PGM: `T(x) = prox_{gamma g}(x - gamma tau (x - D(x)))`
//!
//! [`solve_fixed_point`] iterates any [`FixedPointMap`], optionally with
//! Nesterov extrapolation or Anderson mixing, and records a [`SolverTrace`].

mod accel;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DmbaError, Result};
use crate::forward_models::DataFidelity;
use crate::harness::psnr;
use crate::numerics::{ImageTensor, Linearization, ParamVector, Tape};
use crate::priors::DenoiserNet;

pub use accel::{anderson_update, nesterov_update, Anderson, ANDERSON_RIDGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SdRed,
    PnpPgm,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::SdRed => "sd-red",
            Variant::PnpPgm => "pnp-pgm",
        })
    }
}

impl FromStr for Variant {
    type Err = DmbaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd-red" => Ok(Variant::SdRed),
            "pnp-pgm" => Ok(Variant::PnpPgm),
            other => Err(DmbaError::Config(format!("unknown solver variant `{other}`"))),
        }
    }
}

/// A map whose fixed point is sought.
pub trait FixedPointMap {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor>;

    /// Scalar recorded in the trace next to each iterate, if any.
    fn objective(&self, _x: &ImageTensor) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<F: Fn(&ImageTensor) -> Result<ImageTensor>> FixedPointMap for F {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self(x)
    }
}

/// Vector-Jacobian products of a map at a fixed linearization point.
pub trait VectorJacobian {
    /// The map's value at the linearization point.
    fn output(&self) -> &ImageTensor;
    fn vjp_input(&self, seed: &ImageTensor) -> Result<ImageTensor>;
    fn vjp_params(&self, seed: &ImageTensor) -> Result<ParamVector>;
}

impl VectorJacobian for Linearization {
    fn output(&self) -> &ImageTensor {
        Linearization::output(self)
    }

    fn vjp_input(&self, seed: &ImageTensor) -> Result<ImageTensor> {
        Linearization::vjp_input(self, seed)
    }

    fn vjp_params(&self, seed: &ImageTensor) -> Result<ParamVector> {
        self.vjp(seed).map(|(_, p)| p)
    }
}

/// A parameterized fixed-point map that can be linearized.
pub trait DifferentiableMap: FixedPointMap {
    type Linear: VectorJacobian;

    fn linearize(&self, x: &ImageTensor) -> Result<Self::Linear>;
}

#[derive(Debug, Clone)]
pub struct FixedPointProblem {
    data_fidelity: DataFidelity,
    net: DenoiserNet,
    gamma: f64,
    tau: f64,
    variant: Variant,
}

impl FixedPointProblem {
    pub fn new(data_fidelity: DataFidelity, net: DenoiserNet, gamma: f64, tau: f64, variant: Variant) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(DmbaError::NonPositiveGamma(gamma));
        }
        if !(tau > 0.0) {
            return Err(DmbaError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(FixedPointProblem {
            data_fidelity,
            net,
            gamma,
            tau,
            variant,
        })
    }

    pub fn data_fidelity(&self) -> &DataFidelity {
        &self.data_fidelity
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// The same problem with a different update rule.
    pub fn with_variant(&self, variant: Variant) -> Self {
        FixedPointProblem {
            variant,
            ..self.clone()
        }
    }

    fn expect_variant(&self, variant: Variant) -> Result<()> {
        if self.variant != variant {
            return Err(DmbaError::InvalidArgument(format!(
                "{variant} step requested on a {} problem",
                self.variant
            )));
        }
        Ok(())
    }

    pub fn step(&self, x: &ImageTensor) -> Result<ImageTensor> {
        match self.variant {
            Variant::SdRed => self.step_sd_red(x),
            Variant::PnpPgm => self.step_pnp_pgm(x),
        }
    }

    /// `x - gamma (grad g(x) + tau (x - D(x)))`
    pub fn step_sd_red(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.expect_variant(Variant::SdRed)?;
        x.ensure_shape(self.data_fidelity.image_shape())?;
        let grad = self.data_fidelity.gradient(x)?;
        let residual = self.net.residual(x)?;
        let inner = grad.axpby(1.0, &residual, self.tau);
        Ok(x.axpby(1.0, &inner, -self.gamma))
    }

    /// `prox_{gamma g}(x - gamma tau (x - D(x)))`
    pub fn step_pnp_pgm(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.expect_variant(Variant::PnpPgm)?;
        x.ensure_shape(self.data_fidelity.image_shape())?;
        let residual = self.net.residual(x)?;
        let z = x.axpby(1.0, &residual, -self.gamma * self.tau);
        self.data_fidelity.prox(&z, self.gamma)
    }

    /// `||grad g(x) + tau (x - D(x))|| / (1 + ||x||)`, zero exactly on the
    /// shared fixed-point set.
    pub fn gradient_balance_residual(&self, x: &ImageTensor) -> Result<f64> {
        let grad = self.data_fidelity.gradient(x)?;
        let residual = self.net.residual(x)?;
        Ok(grad.axpby(1.0, &residual, self.tau).norm() / (1.0 + x.norm()))
    }
}

impl FixedPointMap for FixedPointProblem {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.step(x)
    }

    fn objective(&self, x: &ImageTensor) -> Result<Option<f64>> {
        self.data_fidelity.value(x).map(Some)
    }
}

impl DifferentiableMap for FixedPointProblem {
    type Linear = Linearization;

    /// Records one step of `T` with the network parameters as tape parameters.
    fn linearize(&self, x: &ImageTensor) -> Result<Linearization> {
        x.ensure_shape(self.data_fidelity.image_shape())?;
        let (gamma, tau) = (self.gamma, self.tau);
        let mut tape = Tape::with_params(self.net.params().clone());
        let input = tape.input(x.clone());
        let d = self.net.record(&mut tape, input)?;
        let out = match self.variant {
            Variant::SdRed => {
                let normal = tape.linear(input, self.data_fidelity.normal_map())?;
                let t = tape.axpby(input, 1.0 - gamma * tau, normal, -gamma)?;
                let t = tape.axpby(t, 1.0, d, gamma * tau)?;
                tape.add_const(t, &self.data_fidelity.back_projection().scale(gamma))?
            }
            Variant::PnpPgm => {
                let z = tape.axpby(input, 1.0 - gamma * tau, d, gamma * tau)?;
                let s = tape.linear(z, self.data_fidelity.prox_linear_part(gamma))?;
                let offset = self
                    .data_fidelity
                    .prox(&ImageTensor::zeros_shape(x.shape()), gamma)?;
                tape.add_const(s, &offset)?
            }
        };
        debug_assert_eq!(tape.value(out).shape(), x.shape());
        tape.freeze()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Accelerator {
    None,
    Nesterov,
    Anderson { memory: usize, relaxation: f64 },
}

impl Accelerator {
    pub fn anderson_default() -> Self {
        Accelerator::Anderson {
            memory: 5,
            relaxation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Threshold on the relative residual `||T(x) - x|| / ||x||`.
    pub tol: f64,
    pub accelerator: Accelerator,
}

impl SolverConfig {
    pub fn new(max_iter: usize, tol: f64, accelerator: Accelerator) -> Self {
        SolverConfig {
            max_iter,
            tol,
            accelerator,
        }
    }

    /// Reconstruction at inference time.
    pub fn inference() -> Self {
        SolverConfig::new(100, 1e-4, Accelerator::anderson_default())
    }

    /// Forward solve inside deep-equilibrium training.
    pub fn deq_forward() -> Self {
        SolverConfig::new(50, 1e-3, Accelerator::anderson_default())
    }

    /// Adjoint solve inside deep-equilibrium training.
    pub fn deq_backward() -> Self {
        SolverConfig::new(50, 1e-4, Accelerator::anderson_default())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "solver tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(DmbaError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if let Accelerator::Anderson { memory, relaxation } = self.accelerator {
            if memory == 0 || !(relaxation > 0.0) {
                return Err(DmbaError::InvalidArgument(format!(
                    "Anderson needs memory >= 1 and relaxation > 0, got {memory} and {relaxation}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub residual: f64,
    pub objective: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolverTrace {
    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.residual)
    }

    pub fn residual_at(&self, iteration: usize) -> Option<f64> {
        self.records.get(iteration.checked_sub(1)?).map(|r| r.residual)
    }

    /// Columns `iter,residual,psnr_db`; the PSNR cell is empty without a reference.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "residual", "psnr_db"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:e}", r.residual),
                r.psnr.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| DmbaError::io(path, e))
    }
}

/// Iterates `map` from `x0`. Each iteration evaluates `T` at the current
/// point `z`, records `||T(z) - z|| / ||z||`, and stops once that falls to
/// `cfg.tol`; the returned image is the last evaluation `T(z)`. Running out of
/// iterations or producing a non-finite iterate is reported through
/// `converged = false`, not as an error.
pub fn solve_fixed_point<M: FixedPointMap + ?Sized>(
    map: &M,
    x0: &ImageTensor,
    cfg: &SolverConfig,
    reference: Option<&ImageTensor>,
) -> Result<(ImageTensor, SolverTrace)> {
    cfg.validate()?;
    let mut anderson = match cfg.accelerator {
        Accelerator::Anderson { memory, relaxation } => Some(Anderson::new(memory, relaxation)),
        _ => None,
    };
    let mut z = x0.clone();
    let mut previous = x0.clone();
    let mut latest = x0.clone();
    let mut records = Vec::new();
    let mut converged = false;

    for k in 1..=cfg.max_iter {
        let fz = map.apply(&z)?;
        let residual = (&fz - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
        records.push(TraceRecord {
            iteration: k,
            residual,
            objective: map.objective(&fz)?,
            psnr: reference.map(|r| psnr(&fz, r)).transpose()?,
        });
        if !fz.is_finite() {
            latest = fz;
            break;
        }
        if residual <= cfg.tol {
            latest = fz;
            converged = true;
            break;
        }
        z = match (&mut anderson, cfg.accelerator) {
            (Some(acc), _) => acc.step(z, fz.clone()),
            (None, Accelerator::Nesterov) => {
                let next = nesterov_update(&fz, &previous, k);
                previous = fz.clone();
                next
            }
            _ => fz.clone(),
        };
        latest = fz;
    }

    let iterations = records.len();
    Ok((
        latest,
        SolverTrace {
            records,
            converged,
            iterations,
        },
    ))
}

/// Everything besides the data and the prior needed to run a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSetup {
    pub variant: Variant,
    pub gamma: f64,
    pub tau: f64,
    pub solver: SolverConfig,
}

impl ReconstructionSetup {
    pub fn new(variant: Variant, tau: f64) -> Self {
        ReconstructionSetup {
            variant,
            gamma: 1.0,
            tau,
            solver: SolverConfig::inference(),
        }
    }

    /// Solves from the back projection `A^T y`.
    pub fn reconstruct(
        &self,
        fidelity: &DataFidelity,
        net: &DenoiserNet,
        reference: Option<&ImageTensor>,
    ) -> Result<(ImageTensor, SolverTrace)> {
        let problem = FixedPointProblem::new(fidelity.clone(), net.clone(), self.gamma, self.tau, self.variant)?;
        solve_fixed_point(&problem, fidelity.back_projection(), &self.solver, reference)
    }
}

#[cfg(test)]
mod tests;
