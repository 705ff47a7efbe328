//! Linear measurement operators, least-squares data fidelity and its proximal map.

mod cg;
mod mri;
mod sr;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DmbaError, Result};
use crate::numerics::{ComplexImageTensor, ImageTensor, LinearMap, Shape};

pub use cg::conjugate_gradient;
pub use mri::MriOperator;
pub use sr::SrOperator;

/// Element of an operator's range.
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    /// Full DFT grid with zeros at unsampled bins.
    Fourier(ComplexImageTensor),
    /// Low-resolution image.
    Pixels(ImageTensor),
}

impl Measurement {
    pub fn shape(&self) -> Shape {
        match self {
            Measurement::Fourier(c) => c.shape(),
            Measurement::Pixels(p) => p.shape(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Measurement::Fourier(c) => c.norm_sq(),
            Measurement::Pixels(p) => p.norm_sq(),
        }
    }

    /// Real inner product (real part of the Hermitian product for Fourier data).
    pub fn real_dot(&self, other: &Measurement) -> Result<f64> {
        match (self, other) {
            (Measurement::Fourier(a), Measurement::Fourier(b)) => {
                b.ensure_shape(a.shape())?;
                Ok(a.real_dot(b))
            }
            (Measurement::Pixels(a), Measurement::Pixels(b)) => {
                b.ensure_shape(a.shape())?;
                Ok(a.dot(b))
            }
            _ => Err(DmbaError::InvalidArgument(
                "cannot pair Fourier and pixel measurements".into(),
            )),
        }
    }

    /// `self - other`
    pub fn sub(&self, other: &Measurement) -> Result<Measurement> {
        match (self, other) {
            (Measurement::Fourier(a), Measurement::Fourier(b)) => {
                b.ensure_shape(a.shape())?;
                Ok(Measurement::Fourier(a.zip_map(b, |u, v| u - v)))
            }
            (Measurement::Pixels(a), Measurement::Pixels(b)) => {
                b.ensure_shape(a.shape())?;
                Ok(Measurement::Pixels(a - b))
            }
            _ => Err(DmbaError::InvalidArgument(
                "cannot combine Fourier and pixel measurements".into(),
            )),
        }
    }
}

/// The linear map `A` of `y = A x + e`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementOperator {
    Mri(MriOperator),
    Sr(SrOperator),
}

impl From<MriOperator> for MeasurementOperator {
    fn from(op: MriOperator) -> Self {
        MeasurementOperator::Mri(op)
    }
}

impl From<SrOperator> for MeasurementOperator {
    fn from(op: SrOperator) -> Self {
        MeasurementOperator::Sr(op)
    }
}

impl fmt::Display for MeasurementOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementOperator::Mri(op) => {
                let s = op.image_shape();
                write!(f, "mri({}x{}, ratio={:.4})", s.height, s.width, op.sampling_ratio())
            }
            MeasurementOperator::Sr(op) => {
                let s = op.image_shape();
                let k = op.kernel();
                write!(
                    f,
                    "sr({}x{}, scale={}, kernel={}x{})",
                    s.height,
                    s.width,
                    op.scale(),
                    k.height(),
                    k.width()
                )
            }
        }
    }
}

impl MeasurementOperator {
    pub fn image_shape(&self) -> Shape {
        match self {
            MeasurementOperator::Mri(op) => op.image_shape(),
            MeasurementOperator::Sr(op) => op.image_shape(),
        }
    }

    pub fn range_shape(&self) -> Shape {
        match self {
            MeasurementOperator::Mri(op) => op.image_shape(),
            MeasurementOperator::Sr(op) => op.range_shape(),
        }
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<Measurement> {
        match self {
            MeasurementOperator::Mri(op) => op.apply(x).map(Measurement::Fourier),
            MeasurementOperator::Sr(op) => op.apply(x).map(Measurement::Pixels),
        }
    }

    pub fn adjoint(&self, r: &Measurement) -> Result<ImageTensor> {
        match (self, r) {
            (MeasurementOperator::Mri(op), Measurement::Fourier(c)) => op.adjoint(c),
            (MeasurementOperator::Sr(op), Measurement::Pixels(p)) => op.adjoint(p),
            (op, other) => Err(DmbaError::InvalidArgument(format!(
                "measurement of shape {} is the wrong kind for {op}",
                other.shape()
            ))),
        }
    }

    /// `A^T A x`
    pub fn normal(&self, x: &ImageTensor) -> Result<ImageTensor> {
        match self {
            MeasurementOperator::Mri(op) => op.normal(x),
            MeasurementOperator::Sr(op) => op.normal(x),
        }
    }

    /// `(gamma A^T A + I)^{-1} rhs` in closed form.
    pub fn solve_shifted(&self, rhs: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
        if !(gamma > 0.0) {
            return Err(DmbaError::NonPositiveGamma(gamma));
        }
        match self {
            MeasurementOperator::Mri(op) => op.solve_shifted(rhs, gamma),
            MeasurementOperator::Sr(op) => op.solve_shifted(rhs, gamma),
        }
    }

    /// `y = A x + e`, with `e` i.i.d. Gaussian of standard deviation
    /// `noise_level`. Fourier data receive circular complex noise with
    /// per-component deviation `noise_level / sqrt(2)` on sampled bins only.
    pub fn simulate(&self, x_true: &ImageTensor, noise_level: f64, rng_seed: u64) -> Result<Observation> {
        if !(noise_level >= 0.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "noise level must be non-negative, got {noise_level}"
            )));
        }
        let mut y = self.apply(x_true)?;
        if noise_level > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            match (&mut y, self) {
                (Measurement::Fourier(c), MeasurementOperator::Mri(op)) => {
                    let normal = Normal::new(0.0, noise_level / std::f64::consts::SQRT_2)
                        .expect("finite deviation");
                    for (v, &m) in c.data_mut().iter_mut().zip(op.mask().data()) {
                        if m != 0.0 {
                            v.re += normal.sample(&mut rng);
                            v.im += normal.sample(&mut rng);
                        }
                    }
                }
                (Measurement::Pixels(p), _) => {
                    let normal = Normal::new(0.0, noise_level).expect("finite deviation");
                    for v in p.data_mut() {
                        *v += normal.sample(&mut rng);
                    }
                }
                _ => unreachable!("apply returns the operator's own range kind"),
            }
        }
        Ok(Observation { y, noise_level })
    }
}

/// Measured data `y` and the noise level used to simulate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Measurement,
    pub noise_level: f64,
}

/// `g(x) = 1/2 ||y - A x||^2` for a fixed operator and observation.
#[derive(Debug, Clone)]
pub struct DataFidelity {
    operator: MeasurementOperator,
    observation: Observation,
    back_projection: ImageTensor,
}

impl DataFidelity {
    pub fn new(operator: MeasurementOperator, observation: Observation) -> Result<Self> {
        let range = operator.range_shape();
        if observation.y.shape() != range {
            return Err(DmbaError::shape(range, observation.y.shape()));
        }
        let back_projection = operator.adjoint(&observation.y)?;
        Ok(DataFidelity {
            operator,
            observation,
            back_projection,
        })
    }

    pub fn operator(&self) -> &MeasurementOperator {
        &self.operator
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    /// `A^T y`, the standard warm start.
    pub fn back_projection(&self) -> &ImageTensor {
        &self.back_projection
    }

    pub fn image_shape(&self) -> Shape {
        self.operator.image_shape()
    }

    pub fn value(&self, x: &ImageTensor) -> Result<f64> {
        let r = self.observation.y.sub(&self.operator.apply(x)?)?;
        Ok(0.5 * r.norm_sq())
    }

    /// `A^T (A x - y)`
    pub fn gradient(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let r = self.operator.apply(x)?.sub(&self.observation.y)?;
        self.operator.adjoint(&r)
    }

    /// `prox_{gamma g}(z) = (gamma A^T A + I)^{-1} (z + gamma A^T y)`.
    pub fn prox(&self, z: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
        if !(gamma > 0.0) {
            return Err(DmbaError::NonPositiveGamma(gamma));
        }
        z.ensure_shape(self.image_shape())?;
        let rhs = z.axpby(1.0, &self.back_projection, gamma);
        self.operator.solve_shifted(&rhs, gamma)
    }

    /// The same proximal map solved by conjugate gradients to relative residual `tol`.
    pub fn prox_cg(&self, z: &ImageTensor, gamma: f64, tol: f64) -> Result<ImageTensor> {
        if !(gamma > 0.0) {
            return Err(DmbaError::NonPositiveGamma(gamma));
        }
        if !(tol > 0.0) {
            return Err(DmbaError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        z.ensure_shape(self.image_shape())?;
        let rhs = z.axpby(1.0, &self.back_projection, gamma);
        let max_iter = rhs.len();
        conjugate_gradient(
            |v| Ok(v.axpby(1.0, &self.operator.normal(v)?, gamma)),
            &rhs,
            tol,
            max_iter,
        )
    }

    /// Linear part of [`DataFidelity::prox`], as a self-adjoint tape primitive.
    pub fn prox_linear_part(&self, gamma: f64) -> Arc<dyn LinearMap> {
        Arc::new(ShiftedInverse {
            operator: self.operator.clone(),
            gamma,
        })
    }

    /// `A^T A`, as a self-adjoint tape primitive.
    pub fn normal_map(&self) -> Arc<dyn LinearMap> {
        Arc::new(NormalMap {
            operator: self.operator.clone(),
        })
    }
}

struct NormalMap {
    operator: MeasurementOperator,
}

impl LinearMap for NormalMap {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.operator.normal(x)
    }

    fn apply_adjoint(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.operator.normal(y)
    }
}

struct ShiftedInverse {
    operator: MeasurementOperator,
    gamma: f64,
}

impl LinearMap for ShiftedInverse {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.operator.solve_shifted(x, self.gamma)
    }

    fn apply_adjoint(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.operator.solve_shifted(y, self.gamma)
    }
}
