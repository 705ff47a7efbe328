//! Experiment configuration files and measurement-operator descriptors.
//!
//! Descriptors are short strings such as `mri:ratio=0.10` or
//! `sr:scale=3:kernel=k1`. Comma-separated values expand to every
//! combination, so `sr:scale=2,4:kernel=k1,k2,k3` names six operators.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser_training::AwgnTrainConfig;
use crate::error::{DmbaError, Result};
use crate::forward_models::{MeasurementOperator, MriOperator, SrOperator};
use crate::numerics::ImageTensor;
use crate::priors::Architecture;
use crate::solvers::{SolverConfig, Variant};

use super::kernels::{make_gaussian_kernel, read_kernel};
use super::masks::make_radial_mask;

/// Built-in blur kernels `k1`..`k3`: `(size, std_x, std_y, angle)`.
pub const KERNEL_PRESETS: [(usize, f64, f64, f64); 3] = [
    (7, 1.0, 1.0, 0.0),
    (7, 1.6, 0.8, std::f64::consts::FRAC_PI_4),
    (9, 2.0, 1.2, -std::f64::consts::FRAC_PI_6),
];

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// One-based index into [`KERNEL_PRESETS`].
    Preset(usize),
    /// Whitespace text matrix on disk, written `@path`.
    File(PathBuf),
}

impl KernelSpec {
    pub fn load(&self) -> Result<ImageTensor> {
        match self {
            KernelSpec::Preset(k) => {
                let (size, sx, sy, angle) = KERNEL_PRESETS[k - 1];
                make_gaussian_kernel(size, sx, sy, angle)
            }
            KernelSpec::File(path) => read_kernel(path),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Preset(k) => write!(f, "k{k}"),
            KernelSpec::File(p) => write!(f, "@{}", p.display()),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = DmbaError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix('@') {
            return Ok(KernelSpec::File(PathBuf::from(path)));
        }
        match s.strip_prefix('k').and_then(|n| n.parse::<usize>().ok()) {
            Some(k) if (1..=KERNEL_PRESETS.len()).contains(&k) => Ok(KernelSpec::Preset(k)),
            _ => Err(DmbaError::Config(format!(
                "unknown kernel `{s}` (expected k1..k{} or @path)",
                KERNEL_PRESETS.len()
            ))),
        }
    }
}

/// A single measurement operator, independent of image size.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorDescriptor {
    Mri { ratio: f64 },
    Sr { scale: usize, kernel: KernelSpec },
}

impl OperatorDescriptor {
    pub fn build(&self, height: usize, width: usize) -> Result<MeasurementOperator> {
        Ok(match self {
            OperatorDescriptor::Mri { ratio } => {
                let mask = make_radial_mask(height, width, *ratio)?;
                log::debug!(
                    "{self}: {} lines, achieved ratio {:.4}",
                    mask.lines,
                    mask.achieved_ratio
                );
                MriOperator::new(mask.mask)?.into()
            }
            OperatorDescriptor::Sr { scale, kernel } => SrOperator::new(kernel.load()?, *scale, height, width)?.into(),
        })
    }

    pub fn problem(&self) -> Problem {
        match self {
            OperatorDescriptor::Mri { .. } => Problem::Csmri,
            OperatorDescriptor::Sr { .. } => Problem::Superres,
        }
    }
}

impl fmt::Display for OperatorDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorDescriptor::Mri { ratio } => write!(f, "mri:ratio={ratio:.2}"),
            OperatorDescriptor::Sr { scale, kernel } => write!(f, "sr:scale={scale}:kernel={kernel}"),
        }
    }
}

impl FromStr for OperatorDescriptor {
    type Err = DmbaError;

    fn from_str(s: &str) -> Result<Self> {
        let set = parse_operator_set(s)?;
        match set.as_slice() {
            [one] => Ok(one.clone()),
            _ => Err(DmbaError::Config(format!("`{s}` names {} operators, expected one", set.len()))),
        }
    }
}

fn field<'a>(part: &'a str, key: &str, whole: &str) -> Result<Vec<&'a str>> {
    part.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .map(|v| v.split(',').map(str::trim).collect())
        .ok_or_else(|| DmbaError::Config(format!("descriptor `{whole}`: expected `{key}=...`, got `{part}`")))
}

/// Expands a descriptor with comma-separated alternatives into single operators.
pub fn parse_operator_set(s: &str) -> Result<Vec<OperatorDescriptor>> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let bad = |what: &str| DmbaError::Config(format!("descriptor `{s}`: {what}"));
    match parts.as_slice() {
        ["mri", ratios] => field(ratios, "ratio", s)?
            .into_iter()
            .map(|r| {
                let ratio: f64 = r.parse().map_err(|_| bad("ratio is not a number"))?;
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(bad("ratio must lie in (0, 1)"));
                }
                Ok(OperatorDescriptor::Mri { ratio })
            })
            .collect(),
        ["sr", scales, kernels] => {
            let kernels = field(kernels, "kernel", s)?
                .into_iter()
                .map(KernelSpec::from_str)
                .collect::<Result<Vec<_>>>()?;
            let mut out = Vec::new();
            for v in field(scales, "scale", s)? {
                let scale: usize = v.parse().map_err(|_| bad("scale is not an integer"))?;
                if scale == 0 {
                    return Err(bad("scale must be at least 1"));
                }
                for kernel in &kernels {
                    out.push(OperatorDescriptor::Sr {
                        scale,
                        kernel: kernel.clone(),
                    });
                }
            }
            Ok(out)
        }
        _ => Err(bad("expected `mri:ratio=R` or `sr:scale=S:kernel=K`")),
    }
}

/// Canonical form of a descriptor list.
pub fn format_operator_set(set: &[OperatorDescriptor]) -> String {
    set.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Csmri,
    Superres,
}

impl Problem {
    /// SD-RED for MRI and PnP-PGM for super-resolution.
    pub fn default_variant(self) -> Variant {
        match self {
            Problem::Csmri => Variant::SdRed,
            Problem::Superres => Variant::PnpPgm,
        }
    }

    pub fn default_noise_level(self) -> f64 {
        match self {
            Problem::Csmri => 0.01,
            Problem::Superres => 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Awgn,
    Deq,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Awgn => "awgn",
            PriorKind::Deq => "deq",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub problem: Problem,
    pub prior: PriorKind,
    /// Operators the DEQ prior is trained under.
    pub train_operator: String,
    /// Operator used by the reconstruction.
    pub inference_operator: String,
    /// Operator that simulates the data in mismatched-inference mode.
    pub data_operator: Option<String>,
    pub mismatched_inference: bool,
    /// Select the AWGN noise level and tau on the test images instead of the
    /// validation images.
    pub oracle_sigma_select: bool,
    pub variant: Option<Variant>,
    pub gamma: f64,
    pub tau_grid: Vec<f64>,
    /// Measurement noise deviation on the [0, 1] scale.
    pub noise_level: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bank_manifest: Option<PathBuf>,
    pub deq_checkpoint: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            id: "experiment".into(),
            problem: Problem::Csmri,
            prior: PriorKind::Awgn,
            train_operator: "mri:ratio=0.10".into(),
            inference_operator: "mri:ratio=0.10".into(),
            data_operator: None,
            mismatched_inference: false,
            oracle_sigma_select: false,
            variant: None,
            gamma: 1.0,
            tau_grid: vec![0.1, 0.2, 0.5, 1.0],
            noise_level: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            bank_manifest: None,
            deq_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Phantom,
    Scene,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Image folder when `source = "directory"`.
    pub dir: Option<PathBuf>,
    /// Number and side of synthetic images.
    pub count: usize,
    pub size: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Phantom,
            dir: None,
            count: 36,
            size: 64,
            train: 24,
            validation: 2,
            test: 10,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub sigma_grid: Vec<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub architecture: Architecture,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let d = AwgnTrainConfig::default();
        DenoiserSection {
            sigma_grid: d.sigma_grid,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            patch_size: d.patch_size,
            patches_per_image: d.patches_per_image,
            architecture: d.architecture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeqSection {
    /// Noise level of the AWGN denoiser the training starts from.
    pub init_sigma: f64,
    /// Regularization strength; when absent the best AWGN tau under the
    /// training operators is used.
    pub tau: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub forward: SolverConfig,
    pub backward: SolverConfig,
}

impl Default for DeqSection {
    fn default() -> Self {
        DeqSection {
            init_sigma: 5.0,
            tau: None,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 4,
            forward: SolverConfig::deq_forward(),
            backward: SolverConfig::deq_backward(),
        }
    }
}

/// Everything one invocation needs. Missing keys take their defaults, and
/// [`ExperimentConfig::resolve`] fills the problem-dependent ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub denoiser: DenoiserSection,
    pub deq: DeqSection,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentSection::default(),
            data: DataSection::default(),
            denoiser: DenoiserSection::default(),
            deq: DeqSection::default(),
            solver: SolverConfig::inference(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DmbaError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DmbaError::MissingData(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| DmbaError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| DmbaError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DmbaError::Config(e.to_string()))
    }

    /// Fills defaults that depend on the problem and checks every field.
    pub fn resolve(mut self) -> Result<Self> {
        let e = &mut self.experiment;
        let problem = e.problem;
        e.variant.get_or_insert(problem.default_variant());
        e.noise_level.get_or_insert(problem.default_noise_level());
        if e.mismatched_inference && e.data_operator.is_none() {
            return Err(DmbaError::Config(
                "mismatched inference needs `data_operator` in [experiment]".into(),
            ));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let problem = e.problem;
        let mut descriptors = vec![&e.train_operator, &e.inference_operator];
        descriptors.extend(e.data_operator.as_ref());
        for d in descriptors {
            for op in parse_operator_set(d)? {
                if op.problem() != problem {
                    return Err(DmbaError::Config(format!("operator `{op}` does not belong to {problem:?}")));
                }
            }
        }
        if !(e.gamma > 0.0) {
            return Err(DmbaError::NonPositiveGamma(e.gamma));
        }
        if e.tau_grid.is_empty() || e.tau_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(DmbaError::Config("tau grid must be nonempty and positive".into()));
        }
        if let Some(t) = self.deq.tau {
            if !(t > 0.0) {
                return Err(DmbaError::Config(format!("tau must be positive, got {t}")));
            }
        }
        if e.noise_level.is_some_and(|n| !(n >= 0.0)) {
            return Err(DmbaError::Config("noise level must be non-negative".into()));
        }
        let d = &self.data;
        if d.source == DataSource::Directory && d.dir.is_none() {
            return Err(DmbaError::Config("directory data source needs `dir`".into()));
        }
        if d.source != DataSource::Directory && d.count < d.train + d.validation + d.test {
            return Err(DmbaError::Config(format!(
                "{} synthetic images cannot be split into {}/{}/{}",
                d.count, d.train, d.validation, d.test
            )));
        }
        self.solver.validate()?;
        self.deq.forward.validate()?;
        self.deq.backward.validate()?;
        self.denoiser_config().architecture.validate()
    }

    pub fn variant(&self) -> Variant {
        self.experiment
            .variant
            .unwrap_or_else(|| self.experiment.problem.default_variant())
    }

    pub fn noise_level(&self) -> f64 {
        self.experiment
            .noise_level
            .unwrap_or_else(|| self.experiment.problem.default_noise_level())
    }

    pub fn train_descriptors(&self) -> Result<Vec<OperatorDescriptor>> {
        parse_operator_set(&self.experiment.train_operator)
    }

    pub fn inference_descriptor(&self) -> Result<OperatorDescriptor> {
        self.experiment.inference_operator.parse()
    }

    /// The operator that produced the data: the inference operator unless
    /// mismatched inference is on.
    pub fn data_descriptor(&self) -> Result<OperatorDescriptor> {
        match (&self.experiment.data_operator, self.experiment.mismatched_inference) {
            (Some(d), true) => d.parse(),
            _ => self.inference_descriptor(),
        }
    }

    pub fn denoiser_config(&self) -> AwgnTrainConfig {
        let d = &self.denoiser;
        AwgnTrainConfig {
            sigma_grid: d.sigma_grid.clone(),
            architecture: d.architecture,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            patch_size: d.patch_size,
            patches_per_image: d.patches_per_image,
            rng_seed: self.experiment.seed,
        }
    }
}
