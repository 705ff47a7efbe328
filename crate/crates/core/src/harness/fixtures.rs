//! Small deterministic problem instances shared by the oracle suites and the
//! `gradcheck` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward_models::{DataFidelity, MeasurementOperator, MriOperator, SrOperator};
use crate::numerics::ImageTensor;
use crate::priors::{Architecture, DenoiserNet};
use crate::solvers::{FixedPointProblem, Variant};

use super::kernels::make_gaussian_kernel;

/// Bernoulli mask keeping each bin with probability `keep`, DC always kept.
pub fn random_mask(height: usize, width: usize, keep: f64, seed: u64) -> MriOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = ImageTensor::from_fn(height, width, |_, _| f64::from(rng.random_bool(keep)));
    mask.set(0, 0, 1.0);
    MriOperator::new(mask).expect("binary mask")
}

/// Sum of a few random Gaussian blobs, rescaled into [0.1, 0.9].
pub fn smooth_image(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(1.0..(height.max(width) as f64 / 3.0).max(1.5)),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let raw = ImageTensor::from_fn(height, width, |i, j| {
        blobs
            .iter()
            .map(|&(ci, cj, s, a)| {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum()
    });
    let lo = raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    raw.map(|v| 0.1 + 0.8 * (v - lo) / span)
}

/// Kaiming network with every weight multiplied by `weight_scale`, so the
/// Jacobian shrinks geometrically with depth.
pub fn scaled_net(arch: Architecture, seed: u64, weight_scale: f64) -> Result<DenoiserNet> {
    let mut net = DenoiserNet::kaiming(arch, seed)?;
    for i in 0..arch.depth {
        for v in &mut net.params_mut().block_mut(2 * i).data {
            *v *= weight_scale;
        }
        for v in &mut net.params_mut().block_mut(2 * i + 1).data {
            *v = 0.05;
        }
    }
    Ok(net)
}

/// Tiny non-residual architecture with 142 parameters.
pub fn tiny_arch() -> Architecture {
    Architecture {
        depth: 3,
        width: 3,
        kernel_size: 3,
        residual: false,
    }
}

/// A contractive problem: random-mask MRI with a strongly damped
/// non-residual network, so plain iteration converges linearly.
pub fn contractive_mri_problem(size: usize, keep: f64, seed: u64, variant: Variant) -> Result<(FixedPointProblem, ImageTensor)> {
    let x_true = smooth_image(size, size, seed);
    let op = MeasurementOperator::from(random_mask(size, size, keep, seed + 1));
    let obs = op.simulate(&x_true, 0.01, seed + 2)?;
    let df = DataFidelity::new(op, obs)?;
    let net = scaled_net(tiny_arch(), seed + 3, 0.5)?;
    Ok((FixedPointProblem::new(df, net, 1.0, 0.5, variant)?, x_true))
}

/// Super-resolution counterpart of [`contractive_mri_problem`]: a smooth
/// `size x size` image blurred by preset `k1` and decimated by `scale`.
pub fn contractive_sr_problem(
    size: usize,
    scale: usize,
    seed: u64,
    variant: Variant,
) -> Result<(FixedPointProblem, ImageTensor)> {
    let x_true = smooth_image(size, size, seed);
    let kernel = make_gaussian_kernel(7, 1.0, 1.0, 0.0)?;
    let op = MeasurementOperator::from(SrOperator::new(kernel, scale, size, size)?);
    let obs = op.simulate(&x_true, 0.01, seed + 2)?;
    let df = DataFidelity::new(op, obs)?;
    let net = scaled_net(tiny_arch(), seed + 3, 0.5)?;
    Ok((FixedPointProblem::new(df, net, 1.0, 0.5, variant)?, x_true))
}
