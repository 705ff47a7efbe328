//! Grayscale image files and the synthetic desk datasets.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DmbaError, Result};
use crate::numerics::{conv2d, ImageTensor, Padding};

use super::kernels::make_gaussian_kernel;

/// Reads an 8-bit grayscale PNG or PGM (colour files are converted to luma)
/// onto the [0, 1] scale.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(DmbaError::MissingData(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(ImageTensor::from_fn(h as usize, w as usize, |i, j| {
        f64::from(img.get_pixel(j as u32, i as u32)[0]) / 255.0
    }))
}

/// Writes `x` clamped to [0, 1] as 8-bit grayscale; the format follows the
/// extension (`.png` or `.pgm`).
pub fn save_image(path: &Path, x: &ImageTensor) -> Result<()> {
    let mut img = GrayImage::new(x.width() as u32, x.height() as u32);
    for i in 0..x.height() {
        for j in 0..x.width() {
            let v = (x.get(i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(j as u32, i as u32, Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Every `.png` / `.pgm` file in `dir`, sorted by file name, with its stem.
pub fn load_directory(dir: &Path) -> Result<Vec<(String, ImageTensor)>> {
    if !dir.is_dir() {
        return Err(DmbaError::MissingData(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DmbaError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DmbaError::MissingData(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            Ok((stem, load_image(p)?))
        })
        .collect()
}

struct Ellipse {
    ci: f64,
    cj: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.ci, x - self.cj);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Head-like phantom: a bright skull ring around a darker interior holding
/// random ellipses of varying contrast, sampled at 2x2 subpixels and lightly
/// blurred.
pub fn phantom(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tilt = rng.random_range(-0.3..0.3);
    let (a0, b0) = (rng.random_range(0.66..0.74), rng.random_range(0.84..0.92));
    let mut shapes = vec![
        Ellipse { ci: 0.0, cj: 0.0, a: a0, b: b0, angle: tilt, value: 0.9 },
        Ellipse { ci: 0.0, cj: 0.0, a: a0 - 0.06, b: b0 - 0.07, angle: tilt, value: -0.65 },
    ];
    let count = rng.random_range(5..9);
    for _ in 0..count {
        let r = rng.random_range(0.0..0.5);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        shapes.push(Ellipse {
            ci: r * phi.sin(),
            cj: r * phi.cos(),
            a: rng.random_range(0.04..0.25),
            b: rng.random_range(0.04..0.3),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            value: if rng.random_bool(0.75) {
                rng.random_range(0.15..0.5)
            } else {
                rng.random_range(-0.2..-0.08)
            },
        });
    }
    let half = size as f64 / 2.0;
    let img = ImageTensor::from_fn(size, size, |i, j| {
        let mut acc = 0.0;
        for (si, sj) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
            let y = (i as f64 + si - half) / half;
            let x = (j as f64 + sj - half) / half;
            let v: f64 = shapes.iter().filter(|e| e.contains(y, x)).map(|e| e.value).sum();
            acc += v;
        }
        acc / 4.0
    });
    // Band-limit the hard ellipse edges the way a finite k-space acquisition
    // would; tiny test images skip it.
    if size < 9 {
        return img.clamp(0.0, 1.0);
    }
    let blur = make_gaussian_kernel(9, 1.0, 1.0, 0.0).expect("valid kernel");
    conv2d(&img, &blur, Padding::Zero).expect("kernel fits").clamp(0.0, 1.0)
}

/// Piecewise-smooth scene: a shaded background with random discs,
/// rectangles and a striped patch, lightly blurred.
pub fn scene(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let (g0, gi, gj) = (
        rng.random_range(0.2..0.6),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
    );
    let mut img = ImageTensor::from_fn(size, size, |i, j| g0 + gi * i as f64 / n + gj * j as f64 / n);
    for _ in 0..rng.random_range(4..8) {
        let (ci, cj) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let r = rng.random_range(0.05 * n..0.25 * n);
        let v = rng.random_range(0.0..1.0);
        let disc = rng.random_bool(0.5);
        let (hi, hj) = (r, rng.random_range(0.05 * n..0.25 * n));
        for i in 0..size {
            for j in 0..size {
                let (di, dj) = (i as f64 - ci, j as f64 - cj);
                let inside = if disc {
                    di * di + dj * dj <= r * r
                } else {
                    di.abs() <= hi && dj.abs() <= hj
                };
                if inside {
                    img.set(i, j, v);
                }
            }
        }
    }
    let (ci, cj, r) = (rng.random_range(0.0..n), rng.random_range(0.0..n), rng.random_range(0.1 * n..0.3 * n));
    let period = rng.random_range(3.0..8.0);
    let phi = rng.random_range(0.0..std::f64::consts::PI);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - ci, j as f64 - cj);
            if di.abs() <= r && dj.abs() <= r {
                let t = (di * phi.sin() + dj * phi.cos()) * std::f64::consts::TAU / period;
                img.set(i, j, 0.5 + 0.4 * t.sin());
            }
        }
    }
    let blur = make_gaussian_kernel(3, 0.6, 0.6, 0.0).expect("valid kernel");
    conv2d(&img, &blur, Padding::Circular).expect("kernel fits").clamp(0.0, 1.0)
}

/// Named images split into training, validation and test sets.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<(String, ImageTensor)>,
    pub validation: Vec<(String, ImageTensor)>,
    pub test: Vec<(String, ImageTensor)>,
}

impl DatasetSplit {
    /// Consecutive chunks of `images` in order.
    pub fn from_images(images: Vec<(String, ImageTensor)>, train: usize, validation: usize, test: usize) -> Result<Self> {
        if images.len() < train + validation + test {
            return Err(DmbaError::InvalidArgument(format!(
                "{} images cannot be split into {train}/{validation}/{test}",
                images.len()
            )));
        }
        let mut it = images.into_iter();
        let train = it.by_ref().take(train).collect();
        let validation = it.by_ref().take(validation).collect();
        let test = it.take(test).collect();
        Ok(DatasetSplit { train, validation, test })
    }

    pub fn train_images(&self) -> Vec<ImageTensor> {
        self.train.iter().map(|(_, x)| x.clone()).collect()
    }
}

/// Synthetic images named `<prefix>_<index>`; seeds run from `seed`.
pub fn synthetic(kind: SyntheticKind, count: usize, size: usize, seed: u64) -> Vec<(String, ImageTensor)> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            match kind {
                SyntheticKind::Phantom => (format!("phantom_{i:03}"), phantom(size, s)),
                SyntheticKind::Scene => (format!("scene_{i:03}"), scene(size, s)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Phantom,
    Scene,
}
