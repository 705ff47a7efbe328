//! Gaussian denoiser training and per-experiment noise-level selection.
//!
//! Noise levels are given on the 0-255 intensity scale and divided by 255 for
//! the [0, 1] images used everywhere else.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DmbaError, Result};
use crate::forward_models::DataFidelity;
use crate::harness::{mean, psnr, EpochRecord, TrainingLog};
use crate::numerics::{Adam, ImageTensor};
use crate::priors::{Architecture, DenoiserNet, PriorMetadata, TrainingKind};
use crate::solvers::ReconstructionSetup;

#[derive(Debug, Clone, PartialEq)]
pub struct AwgnTrainConfig {
    /// Noise standard deviations on the 0-255 scale.
    pub sigma_grid: Vec<f64>,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Random crops drawn from every image per epoch.
    pub patches_per_image: usize,
    pub rng_seed: u64,
}

impl Default for AwgnTrainConfig {
    fn default() -> Self {
        AwgnTrainConfig {
            sigma_grid: vec![2.0, 5.0, 10.0],
            architecture: Architecture::default(),
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 8,
            patch_size: 32,
            patches_per_image: 1,
            rng_seed: 0,
        }
    }
}

impl AwgnTrainConfig {
    pub fn validate(&self, images: &[ImageTensor]) -> Result<()> {
        if let Some(s) = self.sigma_grid.iter().find(|s| !(**s > 0.0)) {
            return Err(DmbaError::InvalidArgument(format!("noise level must be positive, got {s}")));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patches_per_image == 0 {
            return Err(DmbaError::InvalidArgument(
                "learning rate, batch size and patches per image must be positive".into(),
            ));
        }
        for x in images {
            if x.height() < self.patch_size || x.width() < self.patch_size {
                return Err(DmbaError::InvalidArgument(format!(
                    "patch size {} exceeds image {}",
                    self.patch_size,
                    x.shape()
                )));
            }
        }
        Ok(())
    }
}

/// `(z, x0)` pairs with `z = x0 + w`, `w ~ N(0, (sigma / 255)^2)` i.i.d.
pub fn make_awgn_pairs(images: &[ImageTensor], sigma: f64, rng_seed: u64) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    if !(sigma > 0.0) {
        return Err(DmbaError::InvalidArgument(format!("noise level must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, sigma / 255.0).expect("finite deviation");
    Ok(images
        .iter()
        .map(|x| (add_noise(x, &normal, &mut rng), x.clone()))
        .collect())
}

fn add_noise(x: &ImageTensor, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> ImageTensor {
    let mut z = x.clone();
    for v in z.data_mut() {
        *v += normal.sample(rng);
    }
    z
}

/// One of the eight symmetries of the square.
fn dihedral(x: &ImageTensor, code: u8) -> ImageTensor {
    let mut out = x.clone();
    if code & 1 != 0 {
        out = out.transpose();
    }
    if code & 2 != 0 {
        out = out.flip_horizontal();
    }
    if code & 4 != 0 {
        out = out.transpose().flip_horizontal().transpose();
    }
    out
}

fn random_patch(x: &ImageTensor, size: usize, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    let r = rng.random_range(0..=x.height() - size);
    let c = rng.random_range(0..=x.width() - size);
    let patch = x.crop(r, c, size, size)?;
    Ok(dihedral(&patch, rng.random_range(0..8u8)))
}

/// Trains a Kaiming-initialized network at noise level `sigma` (0-255 scale).
pub fn train_denoiser(images: &[ImageTensor], sigma: f64, cfg: &AwgnTrainConfig) -> Result<(DenoiserNet, TrainingLog)> {
    let init = DenoiserNet::kaiming(cfg.architecture, cfg.rng_seed)?;
    train_denoiser_from(&init, images, sigma, cfg)
}

/// Minimizes the mean over patches of `1/2 ||D(z) - x0||^2` with Adam,
/// drawing fresh crops, symmetries and noise each epoch.
pub fn train_denoiser_from(
    init: &DenoiserNet,
    images: &[ImageTensor],
    sigma: f64,
    cfg: &AwgnTrainConfig,
) -> Result<(DenoiserNet, TrainingLog)> {
    if images.is_empty() {
        return Err(DmbaError::InvalidArgument("no training images".into()));
    }
    if !(sigma > 0.0) {
        return Err(DmbaError::InvalidArgument(format!("noise level must be positive, got {sigma}")));
    }
    cfg.validate(images)?;
    let mut net = init.clone();
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((net, log));
    }
    let mut adam = Adam::new(cfg.learning_rate, net.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ sigma.to_bits());
    let normal = Normal::new(0.0, sigma / 255.0).expect("finite deviation");

    for epoch in 1..=cfg.epochs {
        let mut patches = Vec::with_capacity(images.len() * cfg.patches_per_image);
        for x in images {
            for _ in 0..cfg.patches_per_image {
                patches.push(random_patch(x, cfg.patch_size, &mut rng)?);
            }
        }
        let mut losses = Vec::with_capacity(patches.len());
        for batch in patches.chunks(cfg.batch_size) {
            let mut total = net.params().zeros_like();
            for clean in batch {
                let noisy = add_noise(clean, &normal, &mut rng);
                let (out, tape) = net.denoise_traced(&noisy)?;
                let diff = &out - clean;
                losses.push(0.5 * diff.norm_sq());
                let (_, grad) = tape.vjp(&diff)?;
                total.add_scaled(1.0, &grad)?;
            }
            total.scale_in_place(1.0 / batch.len() as f64);
            adam.step(net.params_mut(), &total)?;
        }
        let mean_loss = mean(&losses);
        log::debug!("sigma {sigma} epoch {epoch}: mean loss {mean_loss:.6e}");
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            skipped: 0,
        });
    }
    net.metadata = PriorMetadata {
        kind: TrainingKind::Awgn { sigma },
        seed: cfg.rng_seed,
    };
    Ok((net, log))
}

/// Denoisers keyed by training noise level, in ascending order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenoiserBank {
    entries: Vec<(f64, DenoiserNet)>,
}

impl DenoiserBank {
    pub fn new() -> Self {
        DenoiserBank::default()
    }

    /// Adds or replaces the entry for `sigma`.
    pub fn insert(&mut self, sigma: f64, net: DenoiserNet) {
        match self.entries.binary_search_by(|(s, _)| s.total_cmp(&sigma)) {
            Ok(i) => self.entries[i].1 = net,
            Err(i) => self.entries.insert(i, (sigma, net)),
        }
    }

    pub fn get(&self, sigma: f64) -> Option<&DenoiserNet> {
        self.entries.iter().find(|(s, _)| *s == sigma).map(|(_, n)| n)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.entries.iter().map(|(s, _)| *s).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &DenoiserNet)> {
        self.entries.iter().map(|(s, n)| (*s, n))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Trains one denoiser per configured noise level, serially.
pub fn train_bank(images: &[ImageTensor], cfg: &AwgnTrainConfig) -> Result<(DenoiserBank, Vec<(f64, TrainingLog)>)> {
    let mut bank = DenoiserBank::new();
    let mut logs = Vec::new();
    for &sigma in &cfg.sigma_grid {
        let (net, log) = train_denoiser(images, sigma, cfg)?;
        log::info!(
            "sigma {sigma}: loss {:.4e} -> {:.4e}",
            log.first_loss().unwrap_or(f64::NAN),
            log.last_loss().unwrap_or(f64::NAN)
        );
        bank.insert(sigma, net);
        logs.push((sigma, log));
    }
    Ok((bank, logs))
}

/// A reconstruction problem with known ground truth, used to score priors.
#[derive(Debug, Clone)]
pub struct SelectionFixture {
    pub fidelity: DataFidelity,
    pub x_true: ImageTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub sigma: f64,
    pub net: DenoiserNet,
    pub psnr: f64,
    /// Mean PSNR of every bank entry, in bank order.
    pub table: Vec<(f64, f64)>,
}

/// Mean reconstruction PSNR of `net` over `fixtures`.
pub fn score_prior(net: &DenoiserNet, fixtures: &[SelectionFixture], setup: &ReconstructionSetup) -> Result<f64> {
    let mut values = Vec::with_capacity(fixtures.len());
    for f in fixtures {
        let (x, _) = setup.reconstruct(&f.fidelity, net, None)?;
        values.push(psnr(&x, &f.x_true)?);
    }
    Ok(mean(&values))
}

/// Runs the full reconstruction once per bank entry and keeps the one with the
/// highest mean PSNR. Ties go to the smaller noise level.
pub fn select_best_sigma(
    bank: &DenoiserBank,
    fixtures: &[SelectionFixture],
    setup: &ReconstructionSetup,
) -> Result<Selection> {
    if bank.is_empty() {
        return Err(DmbaError::InvalidArgument("empty denoiser bank".into()));
    }
    if fixtures.is_empty() {
        return Err(DmbaError::InvalidArgument("no selection fixtures".into()));
    }
    let mut table = Vec::with_capacity(bank.len());
    let mut best: Option<(f64, &DenoiserNet, f64)> = None;
    for (sigma, net) in bank.iter() {
        let score = score_prior(net, fixtures, setup)?;
        table.push((sigma, score));
        if best.is_none_or(|(_, _, b)| score > b) {
            best = Some((sigma, net, score));
        }
    }
    let (sigma, net, psnr) = best.expect("bank is nonempty");
    Ok(Selection {
        sigma,
        net: net.clone(),
        psnr,
        table,
    })
}

/// Writes `sigma,path` lines mapping each noise level to its checkpoint.
pub fn write_bank_manifest(path: &Path, entries: &[(f64, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sigma", "checkpoint"])?;
    for (sigma, ckpt) in entries {
        w.write_record([sigma.to_string(), ckpt.clone()])?;
    }
    w.flush().map_err(|e| DmbaError::io(path, e))
}

pub fn read_bank_manifest(path: &Path) -> Result<Vec<(f64, String)>> {
    if !path.exists() {
        return Err(DmbaError::MissingData(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let sigma = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DmbaError::Config(format!("bad sigma in {}", path.display())))?;
        let ckpt = rec
            .get(1)
            .ok_or_else(|| DmbaError::Config(format!("missing checkpoint path in {}", path.display())))?;
        out.push((sigma, ckpt.to_string()));
    }
    Ok(out)
}
