use crate::error::{DmbaError, Result};
use crate::numerics::ImageTensor;

/// Moves the DC bin from `(0, 0)` to `(h / 2, w / 2)`.
pub fn fftshift(x: &ImageTensor) -> ImageTensor {
    let (h, w) = (x.height(), x.width());
    ImageTensor::from_fn(h, w, |i, j| x.get((i + h - h / 2) % h, (j + w - w / 2) % w))
}

/// Inverse of [`fftshift`].
pub fn ifftshift(x: &ImageTensor) -> ImageTensor {
    let (h, w) = (x.height(), x.width());
    ImageTensor::from_fn(h, w, |i, j| x.get((i + h / 2) % h, (j + w / 2) % w))
}

/// Cartesian-grid rasterization of equally spaced lines through DC.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialMask {
    pub lines: usize,
    /// Lines are cut at this distance from DC, in pixels.
    pub radius: f64,
    pub achieved_ratio: f64,
    /// Binary mask in native DFT layout (DC at `(0, 0)`).
    pub mask: ImageTensor,
}

impl RadialMask {
    /// The mask with DC moved to the grid center, for display.
    pub fn centered(&self) -> ImageTensor {
        fftshift(&self.mask)
    }
}

fn rasterize(height: usize, width: usize, lines: usize, radius: f64) -> ImageTensor {
    let (ci, cj) = ((height / 2) as f64, (width / 2) as f64);
    let mut centered = ImageTensor::zeros(height, width);
    let reach = radius.min((height.max(width)) as f64);
    let steps = (reach * 4.0).ceil() as i64;
    for k in 0..lines {
        let theta = std::f64::consts::PI * k as f64 / lines as f64;
        let (s, c) = theta.sin_cos();
        for t in -steps..=steps {
            let r = t as f64 / 4.0;
            let i = (ci + r * s).round();
            let j = (cj + r * c).round();
            if i >= 0.0 && j >= 0.0 && (i as usize) < height && (j as usize) < width {
                centered.set(i as usize, j as usize, 1.0);
            }
        }
    }
    let mut mask = ifftshift(&centered);
    // Close under k -> -k so real images keep conjugate-symmetric samples.
    for i in 0..height {
        for j in 0..width {
            if mask.get(i, j) != 0.0 {
                mask.set((height - i) % height, (width - j) % width, 1.0);
            }
        }
    }
    mask
}

fn ratio(mask: &ImageTensor) -> f64 {
    mask.sum() / mask.len() as f64
}

/// The sparsest radial mask sampling at least `target_ratio` of the grid.
/// Lines are added one at a time; once enough lines cover the target, their
/// length is trimmed back in quarter-pixel steps to land just above it.
pub fn make_radial_mask(height: usize, width: usize, target_ratio: f64) -> Result<RadialMask> {
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(DmbaError::InvalidArgument(format!(
            "sampling ratio must lie in (0, 1), got {target_ratio}"
        )));
    }
    let full_radius = (height.max(width)) as f64;
    let max_lines = 4 * (height + width);
    for lines in 1..=max_lines {
        let mask = rasterize(height, width, lines, full_radius);
        if ratio(&mask) < target_ratio {
            continue;
        }
        let mut radius = 0.0;
        while radius < full_radius {
            let trimmed = rasterize(height, width, lines, radius);
            let achieved = ratio(&trimmed);
            if achieved >= target_ratio {
                return Ok(RadialMask {
                    lines,
                    radius,
                    achieved_ratio: achieved,
                    mask: trimmed,
                });
            }
            radius += 0.25;
        }
        return Ok(RadialMask {
            lines,
            radius: full_radius,
            achieved_ratio: ratio(&mask),
            mask,
        });
    }
    let mask = rasterize(height, width, max_lines, full_radius);
    Err(DmbaError::UnreachableRatio {
        target: target_ratio,
        achieved: ratio(&mask),
    })
}
