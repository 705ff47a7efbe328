use std::path::Path;

use super::*;
use crate::error::DmbaError;
use crate::numerics::{ImageTensor, ParamVector};
use crate::priors::{Architecture, DenoiserNet, PriorMetadata, TrainingKind};

#[test]
fn near_full_ratio_saturates_small_grid() {
    let m = make_radial_mask(4, 4, 0.999).unwrap();
    assert!(m.achieved_ratio >= 0.999);
    assert_eq!(m.mask.sum(), 16.0);
}

#[test]
fn mask_ratio_counts_nonzeros() {
    let m = make_radial_mask(64, 64, 0.01).unwrap();
    let nonzero = m.mask.data().iter().filter(|v| **v != 0.0).count();
    assert_eq!(m.achieved_ratio, nonzero as f64 / 4096.0);
    assert!(m.mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn ten_percent_mask_on_128_grid() {
    let m = make_radial_mask(128, 128, 0.10).unwrap();
    assert!((0.10..=0.11).contains(&m.achieved_ratio), "{}", m.achieved_ratio);
}

#[test]
fn masks_hit_targets_and_are_point_symmetric() {
    for (h, w) in [(64, 64), (60, 60), (48, 64), (33, 33)] {
        for target in [0.1, 0.2, 0.3, 0.5] {
            let m = make_radial_mask(h, w, target).unwrap();
            assert!(
                m.achieved_ratio >= target && m.achieved_ratio <= target + 0.01,
                "{h}x{w} at {target}: {}",
                m.achieved_ratio
            );
            for i in 0..h {
                for j in 0..w {
                    assert_eq!(m.mask.get(i, j), m.mask.get((h - i) % h, (w - j) % w));
                }
            }
            assert_eq!(m.mask.get(0, 0), 1.0, "DC sampled");
            assert_eq!(make_radial_mask(h, w, target).unwrap(), m);
        }
    }
    assert!(make_radial_mask(8, 8, 0.0).is_err());
    assert!(make_radial_mask(8, 8, 1.0).is_err());
}

#[test]
fn shifts_are_inverse() {
    let x = ImageTensor::from_fn(5, 6, |i, j| (7 * i + j) as f64);
    assert_eq!(ifftshift(&fftshift(&x)), x);
    assert_eq!(fftshift(&x).get(2, 3), x.get(0, 0));
}

#[test]
fn narrow_kernel_is_an_impulse() {
    let k = make_gaussian_kernel(5, 1e-6, 1e-6, 0.3).unwrap();
    assert!(k.get(2, 2) >= 1.0 - 1e-6);
}

#[test]
fn kernels_sum_to_one() {
    for (size, sx, sy, a) in [(3, 0.5, 0.5, 0.0), (7, 1.6, 0.8, 0.7), (9, 2.0, 1.2, -0.5), (11, 5.0, 0.3, 2.0)] {
        let k = make_gaussian_kernel(size, sx, sy, a).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }
    assert!(matches!(make_gaussian_kernel(4, 1.0, 1.0, 0.0), Err(DmbaError::EvenKernel { .. })));
    assert!(make_gaussian_kernel(5, 0.0, 1.0, 0.0).is_err());
}

#[test]
fn isotropic_kernel_matches_formula() {
    let k = make_gaussian_kernel(7, 1.0, 1.0, 0.0).unwrap();
    let raw = ImageTensor::from_fn(7, 7, |i, j| {
        let (di, dj) = (i as f64 - 3.0, j as f64 - 3.0);
        (-(di * di + dj * dj) / 2.0).exp()
    });
    let z = raw.sum();
    for i in 0..7 {
        for j in 0..7 {
            assert!((k.get(i, j) - raw.get(i, j) / z).abs() < 1e-12);
        }
    }
    // Transposing the grid mirrors the rotation angle.
    let a = make_gaussian_kernel(7, 1.6, 0.8, 0.4).unwrap();
    let b = make_gaussian_kernel(7, 1.6, 0.8, std::f64::consts::FRAC_PI_2 - 0.4).unwrap();
    assert!(a.transpose().max_abs_diff(&b) < 1e-12);
}

#[test]
fn kernel_text_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.txt");
    let k = make_gaussian_kernel(5, 1.2, 0.7, 0.3).unwrap();
    write_kernel(&path, &k).unwrap();
    assert_eq!(read_kernel(&path).unwrap(), k);
    std::fs::write(&path, "1 2\n3\n").unwrap();
    assert!(read_kernel(&path).is_err());
}

#[test]
fn psnr_closed_forms() {
    let r = ImageTensor::from_fn(8, 8, |i, j| 0.01 * (i + j) as f64);
    assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
    let x = r.map(|v| v + 0.1);
    assert!((psnr(&x, &r).unwrap() - 20.0).abs() < 1e-12);
    assert!(psnr(&x, &ImageTensor::zeros(4, 4)).is_err());
}

#[test]
fn psnr_matches_direct_formula() {
    let a = smooth(4);
    let b = smooth(5);
    let m: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    assert!((psnr(&a, &b).unwrap() - (-10.0 * m.log10())).abs() < 1e-12);
    assert_eq!(mse(&a, &b).unwrap(), m);
}

fn smooth(seed: u64) -> ImageTensor {
    fixtures::smooth_image(16, 16, seed)
}

#[test]
fn pairwise_mean() {
    assert!(mean(&[]).is_nan());
    assert_eq!(mean(&[1.0, 2.0, 3.0, 6.0]), 3.0);
    let v: Vec<f64> = (0..1001).map(|i| i as f64 * 0.1).collect();
    assert!((mean(&v) - 50.0).abs() < 1e-12);
}

#[test]
fn image_round_trip_through_png_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let x = ImageTensor::from_fn(6, 9, |i, j| ((i * 9 + j) * 4) as f64 / 255.0);
    for name in ["a.png", "b.pgm"] {
        let p = dir.path().join(name);
        save_image(&p, &x).unwrap();
        assert!(load_image(&p).unwrap().max_abs_diff(&x) < 1e-12);
    }
    let all = load_directory(dir.path()).unwrap();
    assert_eq!(all.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    assert!(matches!(
        load_image(&dir.path().join("none.png")),
        Err(DmbaError::MissingData(_))
    ));
}

#[test]
fn synthetic_images_are_deterministic_and_in_range() {
    for kind in [SyntheticKind::Phantom, SyntheticKind::Scene] {
        let a = synthetic(kind, 3, 32, 9);
        assert_eq!(a, synthetic(kind, 3, 32, 9));
        assert_ne!(a[0].1, a[1].1);
        for (_, x) in &a {
            assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(x.norm() > 0.0);
        }
    }
    let split = DatasetSplit::from_images(synthetic(SyntheticKind::Phantom, 5, 8, 0), 2, 1, 2).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (2, 1, 2));
    assert_eq!(split.test[1].0, "phantom_004");
    assert!(DatasetSplit::from_images(synthetic(SyntheticKind::Phantom, 2, 8, 0), 2, 1, 0).is_err());
}

fn sample_net(arch: Architecture) -> DenoiserNet {
    let mut net = DenoiserNet::kaiming(arch, 4).unwrap();
    net.metadata = PriorMetadata {
        kind: TrainingKind::Deq {
            train_operator: "mri:ratio=0.10".into(),
            tau: 0.5,
        },
        seed: 4,
    };
    net
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let arch = Architecture {
        depth: 3,
        width: 4,
        kernel_size: 3,
        residual: true,
    };
    let net = sample_net(arch);
    save_checkpoint(&path, &net).unwrap();
    let back = load_checkpoint(&path, Some(arch)).unwrap();
    assert_eq!(back, net);
    let bits = |p: &ParamVector| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.params()), bits(net.params()));

    let mut awgn = DenoiserNet::kaiming(arch, 1).unwrap();
    awgn.metadata.kind = TrainingKind::Awgn { sigma: 5.0 };
    let bytes = encode_checkpoint(&awgn);
    assert_eq!(decode_checkpoint(&bytes, Path::new("mem"), None).unwrap(), awgn);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let arch = Architecture {
        depth: 3,
        width: 4,
        kernel_size: 3,
        residual: false,
    };
    let bytes = encode_checkpoint(&sample_net(arch));

    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(DmbaError::CorruptFile { .. })));

    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(DmbaError::CorruptFile { .. })));

    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(DmbaError::CorruptFile { .. })));

    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    std::fs::write(&path, &future).unwrap();
    assert!(matches!(
        load_checkpoint(&path, None),
        Err(DmbaError::VersionMismatch { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));

    assert!(matches!(
        load_checkpoint(&dir.path().join("absent.ckpt"), None),
        Err(DmbaError::MissingCheckpoint(_))
    ));
}

#[test]
fn width_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w32.ckpt");
    let wide = Architecture {
        depth: 2,
        width: 32,
        kernel_size: 3,
        residual: true,
    };
    save_checkpoint(&path, &DenoiserNet::kaiming(wide, 0).unwrap()).unwrap();
    let narrow = Architecture { width: 16, ..wide };
    assert!(matches!(load_checkpoint(&path, Some(narrow)), Err(DmbaError::ArchMismatch { .. })));
}

#[test]
fn descriptors_parse_expand_and_print() {
    let set = parse_operator_set("sr:scale=2,4:kernel=k1,k2,k3").unwrap();
    assert_eq!(set.len(), 6);
    assert_eq!(set[4].to_string(), "sr:scale=4:kernel=k2");
    let mri: OperatorDescriptor = "mri:ratio=0.1".parse().unwrap();
    assert_eq!(mri, OperatorDescriptor::Mri { ratio: 0.1 });
    assert_eq!(mri.to_string(), "mri:ratio=0.10");
    assert_eq!(mri.to_string().parse::<OperatorDescriptor>().unwrap(), mri);
    for bad in ["mri:ratio=1.5", "mri:rate=0.1", "ct:angles=4", "sr:scale=0:kernel=k1", "sr:scale=2:kernel=k9"] {
        assert!(parse_operator_set(bad).is_err(), "{bad}");
    }
    assert!("mri:ratio=0.1,0.2".parse::<OperatorDescriptor>().is_err());

    let op = "sr:scale=3:kernel=k2".parse::<OperatorDescriptor>().unwrap().build(12, 12).unwrap();
    assert_eq!(op.range_shape().height, 4);
    let mri = mri.build(32, 32).unwrap();
    assert_eq!(mri.image_shape().width, 32);
}

#[test]
fn config_defaults_resolve_and_echo() {
    let text = r#"
        [experiment]
        id = "sr-check"
        problem = "superres"
        train_operator = "sr:scale=2,4:kernel=k1"
        inference_operator = "sr:scale=3:kernel=k1"

        [data]
        source = "scene"
        size = 60

        [denoiser.architecture]
        width = 16
    "#;
    let cfg = ExperimentConfig::from_toml(text).unwrap().resolve().unwrap();
    assert_eq!(cfg.variant(), crate::solvers::Variant::PnpPgm);
    assert_eq!(cfg.noise_level(), 0.03);
    assert_eq!(cfg.denoiser.architecture.width, 16);
    assert_eq!(cfg.denoiser.architecture.depth, 7);
    assert_eq!(cfg.train_descriptors().unwrap().len(), 2);
    let echoed = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(echoed, cfg);

    let mri = ExperimentConfig::default().resolve().unwrap();
    assert_eq!(mri.variant(), crate::solvers::Variant::SdRed);
    assert_eq!(mri.noise_level(), 0.01);

    assert!(ExperimentConfig::from_toml("[experiment]\nbogus = 1\n").is_err());
    let wrong_family = "[experiment]\ninference_operator = \"sr:scale=2:kernel=k1\"\n";
    assert!(ExperimentConfig::from_toml(wrong_family).unwrap().resolve().is_err());
    let no_data_op = "[experiment]\nmismatched_inference = true\n";
    assert!(ExperimentConfig::from_toml(no_data_op).unwrap().resolve().is_err());
}

/// A non-residual net whose weights vanish outputs its last bias everywhere,
/// so with that bias set to a constant image's value it is a perfect denoiser.
fn constant_oracle(arch: Architecture, value: f64) -> DenoiserNet {
    let mut params = arch.zero_params();
    let last = params.num_blocks() - 1;
    params.block_mut(last).data.iter_mut().for_each(|b| *b = value);
    DenoiserNet::from_params(
        arch,
        params,
        PriorMetadata {
            kind: TrainingKind::Awgn { sigma: 5.0 },
            seed: 0,
        },
    )
    .unwrap()
}

#[test]
fn perfect_denoiser_beats_back_projection() {
    let dir = tempfile::tempdir().unwrap();
    let img_dir = dir.path().join("images");
    std::fs::create_dir_all(&img_dir).unwrap();
    let value = 128.0 / 255.0;
    for name in ["a", "b", "c"] {
        save_image(&img_dir.join(format!("{name}.png")), &ImageTensor::filled(16, 16, value)).unwrap();
    }
    let arch = Architecture {
        depth: 2,
        width: 2,
        kernel_size: 3,
        residual: false,
    };
    save_checkpoint(&dir.path().join("oracle.ckpt"), &constant_oracle(arch, value)).unwrap();
    write_bank_manifest_for_test(&dir.path().join("bank.csv"));

    let mut cfg = ExperimentConfig::default();
    cfg.experiment.id = "stub".into();
    cfg.experiment.inference_operator = "mri:ratio=0.30".into();
    cfg.experiment.out_dir = dir.path().join("out");
    cfg.experiment.bank_manifest = Some(dir.path().join("bank.csv"));
    cfg.experiment.tau_grid = vec![0.5];
    cfg.data = DataSection {
        source: DataSource::Directory,
        dir: Some(img_dir),
        count: 0,
        size: 0,
        train: 1,
        validation: 1,
        test: 1,
        seed: 0,
    };
    cfg.denoiser.architecture = arch;
    let cfg = cfg.resolve().unwrap();

    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.rows.len(), 1);
    let backproj = simulate_dataset(&cfg).unwrap();
    assert!(outcome.rows[0].psnr_db > backproj[0].1 + 3.0, "{:?} vs {backproj:?}", outcome.rows);
    assert_eq!(outcome.summary.mean_psnr_db, outcome.rows[0].psnr_db);
    for file in ["stub_metrics.csv", "stub_summary.csv", "stub_config.toml", "traces/stub_c.csv", "simulated/mask.png"] {
        assert!(cfg.experiment.out_dir.join(file).exists(), "{file}");
    }
    let header = std::fs::read_to_string(cfg.experiment.out_dir.join("stub_metrics.csv")).unwrap();
    assert!(header.starts_with("experiment_id,image_id,prior,train_desc,infer_desc,psnr_db,iters,converged"));

    let mut missing = cfg.clone();
    missing.experiment.bank_manifest = Some(dir.path().join("nope.csv"));
    assert!(matches!(run_experiment(&missing), Err(DmbaError::MissingCheckpoint(_))));
    let mut no_data = cfg.clone();
    no_data.data.dir = Some(dir.path().join("nothing"));
    assert!(matches!(run_experiment(&no_data), Err(DmbaError::MissingData(_))));
}

fn write_bank_manifest_for_test(path: &Path) {
    crate::denoiser_training::write_bank_manifest(path, &[(5.0, "oracle.ckpt".to_string())]).unwrap();
}

#[test]
fn oracle_suites_pass() {
    for check in operator_suite(0).unwrap().into_iter().chain(gradient_suite(0).unwrap()) {
        assert!(check.passed(), "{check}");
    }
}
