//! End-to-end pipelines: dataset loading, prior training, per-experiment
//! prior selection, and the scored reconstruction runs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::denoiser_training::{
    read_bank_manifest, select_best_sigma, train_bank, write_bank_manifest, DenoiserBank, SelectionFixture,
};
use crate::deq_training::{train_deq, DeqSample, DeqTrainConfig};
use crate::error::{DmbaError, Result};
use crate::forward_models::{DataFidelity, MeasurementOperator};
use crate::numerics::{ImageTensor, Shape};
use crate::priors::{DenoiserNet, TrainingKind};
use crate::solvers::ReconstructionSetup;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{
    format_operator_set, parse_operator_set, DataSection, DataSource, ExperimentConfig, OperatorDescriptor, PriorKind,
};
use super::images::{load_directory, synthetic, DatasetSplit, SyntheticKind};
use super::metrics::{mean, psnr};
use super::training_log::TrainingLog;

// Noise seeds of the three splits are kept apart so that no two simulated
// observations share a stream.
const TRAIN_STREAM: u64 = 0;
const VALIDATION_STREAM: u64 = 1 << 20;
const TEST_STREAM: u64 = 2 << 20;

pub fn load_dataset(data: &DataSection) -> Result<DatasetSplit> {
    let images = match data.source {
        DataSource::Phantom => synthetic(SyntheticKind::Phantom, data.count, data.size, data.seed),
        DataSource::Scene => synthetic(SyntheticKind::Scene, data.count, data.size, data.seed),
        DataSource::Directory => {
            let dir = data
                .dir
                .as_ref()
                .ok_or_else(|| DmbaError::Config("directory data source needs `dir`".into()))?;
            load_directory(dir)?
        }
    };
    DatasetSplit::from_images(images, data.train, data.validation, data.test)
}

/// Builds operators on demand, once per image shape.
#[derive(Default)]
struct OperatorCache {
    built: HashMap<(String, Shape), MeasurementOperator>,
}

impl OperatorCache {
    fn get(&mut self, desc: &OperatorDescriptor, shape: Shape) -> Result<MeasurementOperator> {
        let key = (desc.to_string(), shape);
        if let Some(op) = self.built.get(&key) {
            return Ok(op.clone());
        }
        let op = desc.build(shape.height, shape.width)?;
        self.built.insert(key, op.clone());
        Ok(op)
    }
}

fn stream_seed(base: u64, stream: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream)
        .wrapping_add(index as u64)
}

/// Simulates each image under `data_ops[i % len]` and pairs the data with the
/// matching operator from `recon_ops`, which differs only in
/// mismatched-inference mode.
fn make_fixtures(
    images: &[(String, ImageTensor)],
    data_ops: &[OperatorDescriptor],
    recon_ops: &[OperatorDescriptor],
    noise_level: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<(String, SelectionFixture)>> {
    let mut cache = OperatorCache::default();
    images
        .iter()
        .enumerate()
        .map(|(i, (name, x))| {
            let data_op = cache.get(&data_ops[i % data_ops.len()], x.shape())?;
            let recon_op = cache.get(&recon_ops[i % recon_ops.len()], x.shape())?;
            let obs = data_op.simulate(x, noise_level, stream_seed(seed, stream, i))?;
            let fixture = SelectionFixture {
                fidelity: DataFidelity::new(recon_op, obs)?,
                x_true: x.clone(),
            };
            Ok((name.clone(), fixture))
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DmbaError::io(dir, e))
}

/// Writes the resolved configuration next to the results.
pub fn echo_config(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    ensure_dir(&cfg.experiment.out_dir)?;
    let path = cfg.experiment.out_dir.join(name);
    fs::write(&path, cfg.to_toml()?).map_err(|e| DmbaError::io(&path, e))?;
    Ok(path)
}

fn sigma_tag(sigma: f64) -> String {
    format!("{sigma}").replace('.', "p")
}

/// Trains one AWGN denoiser per noise level on the training split and writes
/// the checkpoints, their loss logs and a bank manifest into the output
/// directory. Returns the bank and the manifest path.
pub fn train_awgn_bank(cfg: &ExperimentConfig) -> Result<(DenoiserBank, PathBuf)> {
    let out = &cfg.experiment.out_dir;
    ensure_dir(out)?;
    echo_config(cfg, "train_denoiser_config.toml")?;
    let split = load_dataset(&cfg.data)?;
    let (bank, logs) = train_bank(&split.train_images(), &cfg.denoiser_config())?;
    let mut entries = Vec::new();
    for ((sigma, net), (_, log)) in bank.iter().zip(&logs) {
        let name = format!("awgn_sigma{}.ckpt", sigma_tag(sigma));
        save_checkpoint(&out.join(&name), net)?;
        log.write_csv(&out.join(format!("awgn_sigma{}_log.csv", sigma_tag(sigma))))?;
        entries.push((sigma, name));
    }
    let manifest = out.join("bank.csv");
    write_bank_manifest(&manifest, &entries)?;
    Ok((bank, manifest))
}

/// Loads every checkpoint listed in a manifest; relative paths are taken
/// from the manifest's directory.
pub fn load_bank(manifest: &Path, cfg: &ExperimentConfig) -> Result<DenoiserBank> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut bank = DenoiserBank::new();
    for (sigma, ckpt) in read_bank_manifest(manifest)? {
        let path = base.join(ckpt);
        bank.insert(sigma, load_checkpoint(&path, Some(cfg.denoiser.architecture))?);
    }
    Ok(bank)
}

fn bank_from_config(cfg: &ExperimentConfig) -> Result<DenoiserBank> {
    let manifest = cfg
        .experiment
        .bank_manifest
        .as_ref()
        .ok_or_else(|| DmbaError::Config("AWGN prior needs `bank_manifest` in [experiment]".into()))?;
    if !manifest.exists() {
        return Err(DmbaError::MissingCheckpoint(manifest.clone()));
    }
    load_bank(manifest, cfg)
}

/// Result of the joint grid search over `tau` and the bank's noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AwgnChoice {
    pub sigma: f64,
    pub tau: f64,
    pub psnr: f64,
    /// `(tau, sigma, mean psnr)` for every grid point.
    pub table: Vec<(f64, f64, f64)>,
    pub net: DenoiserNet,
}

/// Picks the `(tau, sigma)` pair with the highest mean PSNR on `fixtures`.
/// Ties go to the earlier grid point, so the smaller value of each.
pub fn select_awgn(
    bank: &DenoiserBank,
    fixtures: &[SelectionFixture],
    cfg: &ExperimentConfig,
) -> Result<AwgnChoice> {
    let mut best: Option<AwgnChoice> = None;
    let mut table = Vec::new();
    let mut taus = cfg.experiment.tau_grid.clone();
    taus.sort_by(f64::total_cmp);
    for tau in taus {
        let setup = setup_for(cfg, tau);
        let sel = select_best_sigma(bank, fixtures, &setup)?;
        table.extend(sel.table.iter().map(|&(s, p)| (tau, s, p)));
        if best.as_ref().is_none_or(|b| sel.psnr > b.psnr) {
            best = Some(AwgnChoice {
                sigma: sel.sigma,
                tau,
                psnr: sel.psnr,
                table: Vec::new(),
                net: sel.net,
            });
        }
    }
    let mut best = best.expect("tau grid is nonempty");
    best.table = table;
    Ok(best)
}

fn setup_for(cfg: &ExperimentConfig, tau: f64) -> ReconstructionSetup {
    ReconstructionSetup {
        variant: cfg.variant(),
        gamma: cfg.experiment.gamma,
        tau,
        solver: cfg.solver,
    }
}

/// Trains the artifact-removal prior under the configured training operators,
/// starting from the bank entry at `deq.init_sigma`, and saves `deq.ckpt`
/// with its loss log into the output directory.
pub fn train_deq_prior(cfg: &ExperimentConfig, bank: &DenoiserBank) -> Result<(DenoiserNet, PathBuf, TrainingLog)> {
    let out = &cfg.experiment.out_dir;
    ensure_dir(out)?;
    echo_config(cfg, "train_deq_config.toml")?;
    let split = load_dataset(&cfg.data)?;
    let train_ops = cfg.train_descriptors()?;
    let init = bank.get(cfg.deq.init_sigma).ok_or_else(|| {
        DmbaError::Config(format!(
            "bank has no denoiser at sigma {} (available {:?})",
            cfg.deq.init_sigma,
            bank.sigmas()
        ))
    })?;
    let noise = cfg.noise_level();
    let seed = cfg.experiment.seed;
    let tau = match cfg.deq.tau {
        Some(t) => t,
        None => {
            let fixtures = make_fixtures(&split.validation, &train_ops, &train_ops, noise, seed, VALIDATION_STREAM)?;
            let fixtures: Vec<SelectionFixture> = fixtures.into_iter().map(|(_, f)| f).collect();
            let choice = select_awgn(bank, &fixtures, cfg)?;
            log::info!(
                "tau {} chosen for deep-equilibrium training (AWGN sigma {} scored {:.3} dB)",
                choice.tau,
                choice.sigma,
                choice.psnr
            );
            choice.tau
        }
    };
    let samples: Vec<DeqSample> = make_fixtures(&split.train, &train_ops, &train_ops, noise, seed, TRAIN_STREAM)?
        .into_iter()
        .map(|(_, f)| DeqSample {
            x_true: f.x_true,
            fidelity: f.fidelity,
        })
        .collect();
    let d = &cfg.deq;
    let deq_cfg = DeqTrainConfig {
        train_operator: format_operator_set(&train_ops),
        variant: cfg.variant(),
        gamma: cfg.experiment.gamma,
        tau,
        learning_rate: d.learning_rate,
        epochs: d.epochs,
        batch_size: d.batch_size,
        forward: d.forward,
        backward: d.backward,
        rng_seed: seed,
    };
    let (net, log) = train_deq(&samples, init, &deq_cfg)?;
    let path = out.join("deq.ckpt");
    save_checkpoint(&path, &net)?;
    log.write_csv(&out.join("deq_log.csv"))?;
    Ok((net, path, log))
}

/// One scored test image.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub image_id: String,
    pub prior: String,
    pub train_desc: String,
    pub infer_desc: String,
    /// Infinite when the reconstruction is exact.
    pub psnr_db: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub experiment_id: String,
    pub prior: String,
    pub train_desc: String,
    pub infer_desc: String,
    pub data_desc: String,
    pub tau: f64,
    pub mean_psnr_db: f64,
    pub images: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    /// Present for AWGN priors.
    pub selection: Option<AwgnChoice>,
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "experiment_id",
        "image_id",
        "prior",
        "train_desc",
        "infer_desc",
        "psnr_db",
        "iters",
        "converged",
    ])?;
    for r in rows {
        w.write_record([
            r.experiment_id.clone(),
            r.image_id.clone(),
            r.prior.clone(),
            r.train_desc.clone(),
            r.infer_desc.clone(),
            r.psnr_db.to_string(),
            r.iters.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DmbaError::io(path, e))
}

/// Appends summaries to a CSV, writing the header when the file is new.
pub fn append_summaries(path: &Path, summaries: &[Summary]) -> Result<()> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DmbaError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record([
            "experiment_id",
            "prior",
            "train_desc",
            "infer_desc",
            "data_desc",
            "tau",
            "mean_psnr_db",
            "images",
            "converged",
        ])?;
    }
    for s in summaries {
        w.write_record([
            s.experiment_id.clone(),
            s.prior.clone(),
            s.train_desc.clone(),
            s.infer_desc.clone(),
            s.data_desc.clone(),
            s.tau.to_string(),
            s.mean_psnr_db.to_string(),
            s.images.to_string(),
            s.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DmbaError::io(path, e))
}

/// Simulates every test image under the data operator, reconstructs it with
/// the inference operator and the configured prior, and scores it. Writes
/// `<id>_metrics.csv`, `<id>_summary.csv`, `<id>_config.toml` and one trace
/// per image under `traces/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let e = &cfg.experiment;
    let out = &e.out_dir;
    ensure_dir(&out.join("traces"))?;
    echo_config(cfg, &format!("{}_config.toml", e.id))?;
    let split = load_dataset(&cfg.data)?;
    let infer = vec![cfg.inference_descriptor()?];
    let data = vec![cfg.data_descriptor()?];
    let noise = cfg.noise_level();

    let (net, tau, prior, train_desc, selection) = match e.prior {
        PriorKind::Awgn => {
            let bank = bank_from_config(cfg)?;
            let (source, stream) = if e.oracle_sigma_select {
                (&split.test, TEST_STREAM)
            } else {
                (&split.validation, VALIDATION_STREAM)
            };
            let fixtures: Vec<SelectionFixture> = make_fixtures(source, &data, &infer, noise, e.seed, stream)?
                .into_iter()
                .map(|(_, f)| f)
                .collect();
            let choice = select_awgn(&bank, &fixtures, cfg)?;
            log::info!(
                "{}: sigma {} tau {} selected on {} images ({} mode), {:.3} dB",
                e.id,
                choice.sigma,
                choice.tau,
                fixtures.len(),
                if e.oracle_sigma_select { "oracle" } else { "validation" },
                choice.psnr
            );
            let desc = format!("awgn:sigma={}", choice.sigma);
            (choice.net.clone(), choice.tau, "awgn".to_string(), desc, Some(choice))
        }
        PriorKind::Deq => {
            let path = e
                .deq_checkpoint
                .as_ref()
                .ok_or_else(|| DmbaError::Config("DEQ prior needs `deq_checkpoint` in [experiment]".into()))?;
            let net = load_checkpoint(path, Some(cfg.denoiser.architecture))?;
            let (desc, tau) = match &net.metadata.kind {
                TrainingKind::Deq { train_operator, tau } => (train_operator.clone(), *tau),
                other => {
                    return Err(DmbaError::Config(format!(
                        "{} holds a {other:?} prior, not a deep-equilibrium one",
                        path.display()
                    )))
                }
            };
            (net, tau, "deq".to_string(), desc, None)
        }
    };

    let setup = setup_for(cfg, tau);
    let mut rows = Vec::new();
    for (name, f) in make_fixtures(&split.test, &data, &infer, noise, e.seed, TEST_STREAM)? {
        let (x, trace) = setup.reconstruct(&f.fidelity, &net, Some(&f.x_true))?;
        trace.write_csv(&out.join("traces").join(format!("{}_{name}.csv", e.id)))?;
        rows.push(MetricsRow {
            experiment_id: e.id.clone(),
            image_id: name,
            prior: prior.clone(),
            train_desc: train_desc.clone(),
            infer_desc: infer[0].to_string(),
            psnr_db: psnr(&x, &f.x_true)?,
            iters: trace.iterations,
            converged: trace.converged,
        });
    }
    if rows.is_empty() {
        return Err(DmbaError::InvalidArgument("no test images".into()));
    }
    let values: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
    let summary = Summary {
        experiment_id: e.id.clone(),
        prior,
        train_desc,
        infer_desc: infer[0].to_string(),
        data_desc: data[0].to_string(),
        tau,
        mean_psnr_db: mean(&values),
        images: rows.len(),
        converged: rows.iter().filter(|r| r.converged).count(),
    };
    write_metrics(&out.join(format!("{}_metrics.csv", e.id)), &rows)?;
    let summary_path = out.join(format!("{}_summary.csv", e.id));
    if summary_path.exists() {
        fs::remove_file(&summary_path).map_err(|err| DmbaError::io(&summary_path, err))?;
    }
    append_summaries(&summary_path, std::slice::from_ref(&summary))?;
    log::info!(
        "{}: {} prior, mean {:.3} dB over {} images ({} converged)",
        e.id,
        summary.prior,
        summary.mean_psnr_db,
        summary.images,
        summary.converged
    );
    Ok(ExperimentOutcome {
        rows,
        summary,
        selection,
    })
}

/// Runs every inference operator of the configured set against every prior
/// the configuration names a checkpoint for, and collects the summaries in
/// `grid_summary.csv`.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<Vec<ExperimentOutcome>> {
    let e = &cfg.experiment;
    let mut priors = Vec::new();
    if e.bank_manifest.is_some() {
        priors.push(PriorKind::Awgn);
    }
    if e.deq_checkpoint.is_some() {
        priors.push(PriorKind::Deq);
    }
    if priors.is_empty() {
        return Err(DmbaError::Config(
            "grid needs `bank_manifest` and/or `deq_checkpoint` in [experiment]".into(),
        ));
    }
    let mut outcomes = Vec::new();
    for op in parse_operator_set(&e.inference_operator)? {
        for &prior in &priors {
            let mut one = cfg.clone();
            one.experiment.prior = prior;
            one.experiment.inference_operator = op.to_string();
            one.experiment.id = format!("{}-{prior}-{}", e.id, op.to_string().replace([':', '='], "_"));
            outcomes.push(run_experiment(&one)?);
        }
    }
    let path = e.out_dir.join("grid_summary.csv");
    if path.exists() {
        fs::remove_file(&path).map_err(|err| DmbaError::io(&path, err))?;
    }
    let summaries: Vec<Summary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    append_summaries(&path, &summaries)?;
    Ok(outcomes)
}

/// Writes each test image, its measurement back projection and the inference
/// operator's mask (MRI) or kernel (super-resolution) for inspection.
pub fn simulate_dataset(cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>> {
    let out = cfg.experiment.out_dir.join("simulated");
    ensure_dir(&out)?;
    echo_config(cfg, "simulate_config.toml")?;
    let split = load_dataset(&cfg.data)?;
    let data = vec![cfg.data_descriptor()?];
    let infer = vec![cfg.inference_descriptor()?];
    let fixtures = make_fixtures(&split.test, &data, &infer, cfg.noise_level(), cfg.experiment.seed, TEST_STREAM)?;
    let mut scores = Vec::new();
    for (name, f) in &fixtures {
        super::images::save_image(&out.join(format!("{name}_truth.png")), &f.x_true)?;
        super::images::save_image(&out.join(format!("{name}_backproj.png")), f.fidelity.back_projection())?;
        scores.push((name.clone(), psnr(f.fidelity.back_projection(), &f.x_true)?));
    }
    if let Some((_, f)) = fixtures.first() {
        match f.fidelity.operator() {
            MeasurementOperator::Mri(op) => {
                super::images::save_image(&out.join("mask.png"), &super::masks::fftshift(op.mask()))?
            }
            MeasurementOperator::Sr(op) => super::kernels::write_kernel(&out.join("kernel.txt"), op.kernel())?,
        }
    }
    Ok(scores)
}
