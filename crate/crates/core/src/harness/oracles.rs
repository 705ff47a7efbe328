//! Self-checks run by the `gradcheck` command: operator adjoints, proximal
//! maps, convolution and DFT against direct oracles, and the network and
//! equilibrium gradients against finite differences.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deq_training::{deq_loss, implicit_backward};
use crate::error::Result;
use crate::forward_models::{DataFidelity, Measurement, MeasurementOperator, MriOperator, SrOperator};
use crate::numerics::{
    conv2d, dft2, finite_difference_gradient, idft2, ComplexImageTensor, ImageTensor, Padding, ParamBlock,
    ParamVector,
};
use crate::priors::{Architecture, DenoiserNet, PriorMetadata};
use crate::solvers::{
    solve_fixed_point, Accelerator, DifferentiableMap, FixedPointMap, FixedPointProblem, SolverConfig, Variant,
    VectorJacobian,
};

use super::fixtures::contractive_mri_problem;
use super::kernels::make_gaussian_kernel;

/// Outcome of one check: the worst error seen against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub error: f64,
    pub bound: f64,
}

impl OracleCheck {
    fn new(name: &str, error: f64, bound: f64) -> Self {
        OracleCheck {
            name: name.to_string(),
            error,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.bound
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: error {:.3e} (bound {:.0e})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.error,
            self.bound
        )
    }
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

fn random_measurement(op: &MeasurementOperator, rng: &mut ChaCha8Rng) -> Result<Measurement> {
    let s = op.range_shape();
    Ok(match op {
        MeasurementOperator::Mri(_) => {
            let data = (0..s.len())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            Measurement::Fourier(ComplexImageTensor::from_shape_vec(s, data)?)
        }
        MeasurementOperator::Sr(_) => Measurement::Pixels(random_image(s.height, s.width, rng)),
    })
}

/// `|<A x, r> - <x, A^T r>| / (||x|| ||r||)` for random `x` and `r`.
fn dot_test(op: &MeasurementOperator, rng: &mut ChaCha8Rng) -> Result<f64> {
    let s = op.image_shape();
    let x = random_image(s.height, s.width, rng);
    let r = random_measurement(op, rng)?;
    let lhs = op.apply(&x)?.real_dot(&r)?;
    let rhs = x.dot(&op.adjoint(&r)?);
    Ok((lhs - rhs).abs() / (x.norm() * r.norm_sq().sqrt()))
}

fn random_mri(rng: &mut ChaCha8Rng) -> Result<MeasurementOperator> {
    let h = rng.random_range(6..24);
    let w = rng.random_range(6..24);
    let p = rng.random_range(0.1..0.6);
    let mask = ImageTensor::from_fn(h, w, |_, _| if rng.random_bool(p) { 1.0 } else { 0.0 });
    Ok(MriOperator::new(mask)?.into())
}

fn random_sr(rng: &mut ChaCha8Rng) -> Result<MeasurementOperator> {
    let scale = rng.random_range(1..=4);
    // At least 8 pixels a side so every kernel fits.
    let lo = 8usize.div_ceil(scale);
    let h = scale * rng.random_range(lo..lo + 4);
    let w = scale * rng.random_range(lo..lo + 4);
    let size = [3, 5, 7][rng.random_range(0..3)];
    let kernel = make_gaussian_kernel(
        size,
        rng.random_range(0.4..2.5),
        rng.random_range(0.4..2.5),
        rng.random_range(0.0..std::f64::consts::PI),
    )?;
    Ok(SrOperator::new(kernel, scale, h, w)?.into())
}

/// Direct convolution sum with explicit circular index wrapping.
fn sliding_window(x: &ImageTensor, k: &ImageTensor) -> ImageTensor {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let (kh, kw) = (k.height() as isize, k.width() as isize);
    ImageTensor::from_fn(x.height(), x.width(), |i, j| {
        let mut acc = 0.0;
        for a in 0..kh {
            for b in 0..kw {
                let si = (i as isize - a + kh / 2).rem_euclid(h) as usize;
                let sj = (j as isize - b + kw / 2).rem_euclid(w) as usize;
                acc += k.get(a as usize, b as usize) * x.get(si, sj);
            }
        }
        acc
    })
}

/// Unitary DFT evaluated straight from its defining double sum.
fn naive_dft(x: &ImageTensor) -> ComplexImageTensor {
    let (h, w) = (x.height(), x.width());
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = ComplexImageTensor::zeros(h, w);
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let phase = -std::f64::consts::TAU * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    acc += Complex64::from_polar(x.get(i, j), phase);
                }
            }
            out.data_mut()[u * w + v] = acc * scale;
        }
    }
    out
}

/// Adjoint dot tests, Fourier versus CG proximal maps, circular convolution
/// and the DFT.
pub fn operator_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..10 {
        worst = worst.max(dot_test(&random_mri(&mut rng)?, &mut rng)?);
    }
    checks.push(OracleCheck::new("MRI adjoint dot test (10 instances)", worst, 1e-10));
    let mut worst = 0.0f64;
    for _ in 0..10 {
        worst = worst.max(dot_test(&random_sr(&mut rng)?, &mut rng)?);
    }
    checks.push(OracleCheck::new("SR adjoint dot test (10 instances)", worst, 1e-10));

    let mut worst = 0.0f64;
    for trial in 0..6 {
        let op = if trial % 2 == 0 { random_mri(&mut rng)? } else { random_sr(&mut rng)? };
        let s = op.image_shape();
        let truth = random_image(s.height, s.width, &mut rng);
        let z = random_image(s.height, s.width, &mut rng);
        let gamma = [0.3, 1.0, 4.0][trial % 3];
        let obs = op.simulate(&truth, 0.05, rng.random())?;
        let df = DataFidelity::new(op, obs)?;
        worst = worst.max(df.prox(&z, gamma)?.max_abs_diff(&df.prox_cg(&z, gamma, 1e-12)?));
    }
    checks.push(OracleCheck::new("Fourier prox vs CG prox", worst, 1e-6));

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let x = random_image(rng.random_range(5..14), rng.random_range(5..14), &mut rng);
        let kh = [1, 3, 5][rng.random_range(0..3)];
        let kw = [1, 3, 5][rng.random_range(0..3)];
        let k = random_image(kh, kw, &mut rng);
        worst = worst.max(conv2d(&x, &k, Padding::Circular)?.max_abs_diff(&sliding_window(&x, &k)));
    }
    checks.push(OracleCheck::new("circular conv vs sliding window", worst, 1e-10));

    let (mut parseval, mut round_trip, mut direct) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let x = random_image(rng.random_range(3..20), rng.random_range(3..20), &mut rng);
        let f = dft2(&x);
        parseval = parseval.max((f.norm() - x.norm()).abs() / x.norm());
        round_trip = round_trip.max(idft2(&f).real().max_abs_diff(&x));
        direct = direct.max(f.max_abs_diff(&naive_dft(&x)));
    }
    checks.push(OracleCheck::new("DFT Parseval", parseval, 1e-10));
    checks.push(OracleCheck::new("DFT round trip", round_trip, 1e-10));
    checks.push(OracleCheck::new("DFT vs direct sum", direct, 1e-10));
    Ok(checks)
}

/// `T(x; theta) = theta x + c` on one pixel, with a hand-written Jacobian.
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

fn with_random_biases(mut net: DenoiserNet, rng: &mut ChaCha8Rng) -> DenoiserNet {
    for block in net.params_mut().blocks_mut() {
        if block.shape.len() == 1 {
            block.data.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    net
}

/// Network vector-Jacobian products, the implicit equilibrium gradient and
/// the scalar closed form.
pub fn gradient_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let arch = Architecture {
        depth: 4,
        width: 8,
        kernel_size: 3,
        residual: true,
    };
    let net = with_random_biases(DenoiserNet::kaiming(arch, rng.random())?, &mut rng);
    let x = ImageTensor::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
    let probe = random_image(8, 8, &mut rng);
    let (_, tape) = net.denoise_traced(&x)?;
    let (grad_x, grad_p) = tape.vjp(&probe)?;
    let fd_p = finite_difference_gradient(
        |p| {
            let n = DenoiserNet::from_params(arch, p.clone(), PriorMetadata::default()).expect("same layout");
            n.denoise(&x).expect("valid input").dot(&probe)
        },
        net.params(),
        1e-5,
    );
    checks.push(OracleCheck::new(
        &format!("network parameter vjp vs finite differences ({} params)", arch.param_count()),
        grad_p.relative_error(&fd_p)?,
        1e-4,
    ));
    let eps = 1e-5;
    let mut fd_x = ImageTensor::zeros(8, 8);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        fd_x.data_mut()[i] = (net.denoise(&xp)?.dot(&probe) - net.denoise(&xm)?.dot(&probe)) / (2.0 * eps);
    }
    checks.push(OracleCheck::new(
        "network input vjp vs finite differences",
        (&grad_x - &fd_x).norm() / fd_x.norm(),
        1e-4,
    ));

    let forward = SolverConfig::new(500, 1e-10, Accelerator::anderson_default());
    let backward = SolverConfig::new(500, 1e-12, Accelerator::anderson_default());
    for variant in [Variant::SdRed, Variant::PnpPgm] {
        let (p, x_true) = contractive_mri_problem(8, 0.5, rng.random_range(0..1000), variant)?;
        let (x_bar, _) = solve_fixed_point(&p, p.data_fidelity().back_projection(), &forward, None)?;
        let g = implicit_backward(&p, &x_bar, &x_true, &backward)?;
        let arch = p.net().architecture();
        let fd = finite_difference_gradient(
            |params| {
                let net = DenoiserNet::from_params(arch, params.clone(), PriorMetadata::default()).expect("same layout");
                let probe = FixedPointProblem::new(p.data_fidelity().clone(), net, p.gamma(), p.tau(), p.variant())
                    .expect("valid problem");
                let (xb, _) = solve_fixed_point(&probe, probe.data_fidelity().back_projection(), &forward, None)
                    .expect("solver runs");
                deq_loss(&xb, &x_true).expect("same shape")
            },
            p.net().params(),
            1e-5,
        );
        checks.push(OracleCheck::new(
            &format!(
                "{variant} implicit gradient vs pipeline finite differences ({} params)",
                arch.param_count()
            ),
            g.grad.relative_error(&fd)?,
            1e-3,
        ));
    }

    let tight = SolverConfig::new(200, 1e-13, Accelerator::anderson_default());
    let mut worst = 0.0f64;
    for (theta, c, target) in [(0.6, 0.8, 1.5), (-0.7, 0.3, -0.2), (0.95, 0.05, 0.0)] {
        let map = ScalarAffine { theta, c };
        let (x_bar, _) = solve_fixed_point(&map, &ImageTensor::filled(1, 1, 0.1), &tight, None)?;
        let g = implicit_backward(&map, &x_bar, &ImageTensor::filled(1, 1, target), &tight)?;
        let xb = c / (1.0 - theta);
        let expected = (xb - target) * c / (1.0 - theta).powi(2);
        worst = worst.max((g.grad.flatten()[0] - expected).abs());
    }
    checks.push(OracleCheck::new("scalar equilibrium gradient vs closed form", worst, 1e-8));
    Ok(checks)
}
