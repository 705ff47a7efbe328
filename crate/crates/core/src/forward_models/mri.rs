use num_complex::Complex64;

use crate::error::{DmbaError, Result};
use crate::numerics::{dft2, idft2, ComplexImageTensor, ImageTensor, Shape};

/// Single-coil Cartesian MRI: a binary mask over DFT bins applied after the
/// unitary 2-D DFT. The mask is stored in the transform's native layout (DC at
/// `(0, 0)`).
///
/// Images are real, so the adjoint takes the real part of the inverse DFT and
/// the normal operator `A^T A` acts on the spectrum as the point-symmetrised
/// mask `(m(k) + m(-k)) / 2`. For conjugate-symmetric masks (all masks built by
/// the harness) this is the mask itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MriOperator {
    mask: ImageTensor,
    symmetric_mask: Vec<f64>,
}

impl MriOperator {
    pub fn new(mask: ImageTensor) -> Result<Self> {
        if mask.channels() != 1 || mask.is_empty() {
            return Err(DmbaError::InvalidArgument(format!(
                "mask must be a non-empty single-channel grid, got {}",
                mask.shape()
            )));
        }
        if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "mask entries must be 0 or 1, found {v}"
            )));
        }
        let (h, w) = (mask.height(), mask.width());
        let mut symmetric_mask = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (ri, rj) = ((h - i) % h, (w - j) % w);
                symmetric_mask[i * w + j] = 0.5 * (mask.get(i, j) + mask.get(ri, rj));
            }
        }
        Ok(MriOperator {
            mask,
            symmetric_mask,
        })
    }

    /// Fully sampled operator, `A = F`.
    pub fn full(height: usize, width: usize) -> Self {
        Self::new(ImageTensor::filled(height, width, 1.0)).expect("all-ones mask is valid")
    }

    pub fn mask(&self) -> &ImageTensor {
        &self.mask
    }

    pub fn image_shape(&self) -> Shape {
        self.mask.shape()
    }

    /// Number of sampled bins over number of bins.
    pub fn sampling_ratio(&self) -> f64 {
        self.mask.sum() / self.mask.len() as f64
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ComplexImageTensor> {
        x.ensure_shape(self.image_shape())?;
        let mut spectrum = dft2(x);
        for (c, &m) in spectrum.data_mut().iter_mut().zip(self.mask.data()) {
            if m == 0.0 {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Ok(spectrum)
    }

    pub fn adjoint(&self, r: &ComplexImageTensor) -> Result<ImageTensor> {
        r.ensure_shape(self.image_shape())?;
        let mut masked = r.clone();
        for (c, &m) in masked.data_mut().iter_mut().zip(self.mask.data()) {
            if m == 0.0 {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Ok(idft2(&masked).real())
    }

    /// `A^T A x`
    pub fn normal(&self, x: &ImageTensor) -> Result<ImageTensor> {
        x.ensure_shape(self.image_shape())?;
        let mut spectrum = dft2(x);
        for (c, &m) in spectrum.data_mut().iter_mut().zip(&self.symmetric_mask) {
            *c *= m;
        }
        Ok(idft2(&spectrum).real())
    }

    /// `(gamma A^T A + I)^{-1} rhs`, one per-bin division in the Fourier domain.
    pub fn solve_shifted(&self, rhs: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
        rhs.ensure_shape(self.image_shape())?;
        let mut spectrum = dft2(rhs);
        for (c, &m) in spectrum.data_mut().iter_mut().zip(&self.symmetric_mask) {
            *c /= 1.0 + gamma * m;
        }
        Ok(idft2(&spectrum).real())
    }
}
