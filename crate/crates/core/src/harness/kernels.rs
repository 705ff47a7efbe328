use std::fs;
use std::path::Path;

use crate::error::{DmbaError, Result};
use crate::numerics::ImageTensor;

/// Anisotropic Gaussian with deviations `std_x` (columns) and `std_y` (rows)
/// before rotation by `angle` radians, normalized to unit sum.
pub fn make_gaussian_kernel(size: usize, std_x: f64, std_y: f64, angle: f64) -> Result<ImageTensor> {
    if size % 2 == 0 {
        return Err(DmbaError::EvenKernel {
            height: size,
            width: size,
        });
    }
    if !(std_x > 0.0 && std_y > 0.0) {
        return Err(DmbaError::InvalidArgument(format!(
            "kernel deviations must be positive, got {std_x} and {std_y}"
        )));
    }
    let c = (size / 2) as f64;
    let (s, co) = angle.sin_cos();
    let raw = ImageTensor::from_fn(size, size, |i, j| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        let u = co * dj + s * di;
        let v = -s * dj + co * di;
        (-(u * u) / (2.0 * std_x * std_x) - (v * v) / (2.0 * std_y * std_y)).exp()
    });
    let total = raw.sum();
    Ok(raw.scale(1.0 / total))
}

/// Rows of whitespace-separated numbers.
pub fn write_kernel(path: &Path, kernel: &ImageTensor) -> Result<()> {
    let mut text = String::new();
    for i in 0..kernel.height() {
        let row: Vec<String> = (0..kernel.width()).map(|j| format!("{:e}", kernel.get(i, j))).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| DmbaError::io(path, e))
}

pub fn read_kernel(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(DmbaError::MissingData(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| DmbaError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DmbaError::Config(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(DmbaError::Config(format!("{}: ragged or empty kernel", path.display())));
    }
    let height = rows.len();
    ImageTensor::from_vec(height, width, rows.into_iter().flatten().collect())
}
