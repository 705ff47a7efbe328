//! Experiment plumbing: masks, kernels, datasets, metrics, file formats and
//! the experiment grids.

mod checkpoint;
mod config;
mod experiment;
pub mod fixtures;
mod oracles;
mod images;
mod kernels;
mod masks;
mod metrics;
mod training_log;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::*;
pub use experiment::*;
pub use images::{load_directory, load_image, phantom, save_image, scene, synthetic, DatasetSplit, SyntheticKind};
pub use kernels::{make_gaussian_kernel, read_kernel, write_kernel};
pub use masks::{fftshift, ifftshift, make_radial_mask, RadialMask};
pub use metrics::{mean, mse, psnr};
pub use oracles::{gradient_suite, operator_suite, OracleCheck};
pub use training_log::{EpochRecord, TrainingLog};

#[cfg(test)]
mod tests;
