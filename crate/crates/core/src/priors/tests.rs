use super::*;
use crate::numerics::finite_difference_gradient;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> Architecture {
    Architecture {
        depth: 4,
        width: 8,
        kernel_size: 3,
        residual: true,
    }
}

fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
}

#[test]
fn default_architecture_size() {
    let arch = Architecture::default();
    assert_eq!(arch.param_count(), 320 + 5 * (9216 + 32) + 289);
    assert_eq!(arch.zero_params().total_len(), arch.param_count());
    assert!(small_arch().param_count() <= 5000);
}

#[test]
fn zero_net_is_identity() {
    let net = DenoiserNet::zeros(Architecture::default()).unwrap();
    let x = random_image(9, 11, 0);
    assert_eq!(net.denoise(&x).unwrap(), x);
    assert!(net.residual(&x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn shapes_are_preserved() {
    let net = DenoiserNet::kaiming(Architecture::default(), 1).unwrap();
    for size in [32, 48, 64, 128] {
        let x = random_image(size, size, size as u64);
        let y = net.denoise(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }
}

#[test]
fn residual_and_denoise_sum_to_input() {
    let net = DenoiserNet::kaiming(small_arch(), 2).unwrap();
    let x = random_image(10, 10, 3);
    let d = net.denoise(&x).unwrap();
    let r = net.residual(&x).unwrap();
    assert!((&d + &r).max_abs_diff(&x) < 1e-15);
}

#[test]
fn network_is_nonlinear_and_deterministic() {
    let net = DenoiserNet::kaiming(small_arch(), 4).unwrap();
    let x = random_image(12, 12, 5);
    let a = net.denoise(&x.scale(2.0)).unwrap();
    let b = net.denoise(&x).unwrap().scale(2.0);
    let c = random_image(12, 12, 5).scale(-1.0);
    let d = net.denoise(&c).unwrap();
    let e = net.denoise(&x).unwrap().scale(-1.0);
    // Positive homogeneity holds for a bias-free ReLU net at zero init biases,
    // so probe with a sign flip, which ReLU breaks.
    assert!(a.max_abs_diff(&b) < 1e-12);
    assert!(d.max_abs_diff(&e) > 1e-3);
    assert_eq!(net.denoise(&x).unwrap(), net.denoise(&x).unwrap());
}

#[test]
fn rejects_multichannel_input() {
    let net = DenoiserNet::zeros(small_arch()).unwrap();
    let x = ImageTensor::zeros_shape(Shape::new(2, 4, 4));
    assert!(matches!(net.denoise(&x), Err(DmbaError::ShapeMismatch { .. })));
}

#[test]
fn traced_matches_untraced_bitwise() {
    let net = DenoiserNet::kaiming(Architecture::default(), 6).unwrap();
    let x = random_image(16, 16, 7);
    let (traced, _) = net.denoise_traced(&x).unwrap();
    assert_eq!(traced, net.denoise(&x).unwrap());
}

fn with_random_biases(mut net: DenoiserNet, seed: u64) -> DenoiserNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..net.architecture().depth {
        for v in &mut net.params_mut().block_mut(2 * i + 1).data {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    net
}

#[test]
fn input_vjp_matches_finite_differences() {
    let net = with_random_biases(DenoiserNet::kaiming(small_arch(), 8).unwrap(), 9);
    let x = random_image(8, 8, 10);
    let seed = random_image(8, 8, 11);
    let (_, tape) = net.denoise_traced(&x).unwrap();
    let (grad_x, _) = tape.vjp(&seed).unwrap();

    let eps = 1e-5;
    let mut fd = ImageTensor::zeros(8, 8);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let f = |v: &ImageTensor| net.denoise(v).unwrap().dot(&seed);
        fd.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * eps);
    }
    let rel = (&grad_x - &fd).norm() / fd.norm();
    assert!(rel < 1e-4, "relative error {rel}");
}

#[test]
fn param_vjp_matches_finite_differences() {
    let net = with_random_biases(DenoiserNet::kaiming(small_arch(), 12).unwrap(), 13);
    let x = random_image(8, 8, 14);
    let seed = random_image(8, 8, 15);
    let (_, tape) = net.denoise_traced(&x).unwrap();
    let (_, grad_p) = tape.vjp(&seed).unwrap();

    let arch = net.architecture();
    let fd = finite_difference_gradient(
        |p| {
            let probe = DenoiserNet::from_params(arch, p.clone(), PriorMetadata::default()).unwrap();
            probe.denoise(&x).unwrap().dot(&seed)
        },
        net.params(),
        1e-5,
    );
    let rel = grad_p.relative_error(&fd).unwrap();
    assert!(rel < 1e-4, "relative error {rel}");
}

#[test]
fn arch_mismatch_on_foreign_params() {
    let params = small_arch().zero_params();
    let wide = Architecture {
        width: 16,
        ..small_arch()
    };
    assert!(matches!(
        DenoiserNet::from_params(wide, params, PriorMetadata::default()),
        Err(DmbaError::ArchMismatch { .. })
    ));
    assert!(PriorConfig::new(0.0, "x").is_err());
    assert_eq!(PriorConfig::new(0.5, "awgn").unwrap().tau(), 0.5);
}
