use crate::error::{DmbaError, Result};
use crate::numerics::{
    conv2d, correlate2d, dft2, idft2, transfer_function, ComplexImageTensor, ImageTensor, Padding,
    Shape,
};

/// Super-resolution degradation `A = S H`: circular blur with a normalized
/// kernel followed by keeping pixels `(s*i, s*j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrOperator {
    kernel: ImageTensor,
    scale: usize,
    hr_height: usize,
    hr_width: usize,
    /// Mean of `|H(k)|^2` over the `scale^2` high-res bins that alias onto
    /// each low-res bin; the spectrum of the circulant `S H H^T S^T`.
    aliased_power: Vec<f64>,
}

impl SrOperator {
    pub fn new(kernel: ImageTensor, scale: usize, hr_height: usize, hr_width: usize) -> Result<Self> {
        if scale == 0 {
            return Err(DmbaError::InvalidArgument("scale must be at least 1".into()));
        }
        if hr_height % scale != 0 || hr_width % scale != 0 {
            return Err(DmbaError::InvalidArgument(format!(
                "high-res size {hr_height}x{hr_width} is not divisible by scale {scale}"
            )));
        }
        let (kh, kw) = (kernel.height(), kernel.width());
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(DmbaError::EvenKernel {
                height: kh,
                width: kw,
            });
        }
        if kh > hr_height || kw > hr_width || kernel.channels() != 1 {
            return Err(DmbaError::KernelTooLarge {
                kernel: kernel.shape(),
                image: Shape::image(hr_height, hr_width),
            });
        }
        let total = kernel.sum();
        if !(total > 0.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "blur kernel must have a positive sum, got {total}"
            )));
        }
        let kernel = kernel.scale(1.0 / total);

        let tf = transfer_function(&kernel, hr_height, hr_width);
        let (lh, lw) = (hr_height / scale, hr_width / scale);
        let mut aliased_power = vec![0.0; lh * lw];
        for i in 0..hr_height {
            for j in 0..hr_width {
                aliased_power[(i % lh) * lw + j % lw] += tf.data()[i * hr_width + j].norm_sqr();
            }
        }
        let inv = 1.0 / (scale * scale) as f64;
        for v in &mut aliased_power {
            *v *= inv;
        }

        Ok(SrOperator {
            kernel,
            scale,
            hr_height,
            hr_width,
            aliased_power,
        })
    }

    pub fn kernel(&self) -> &ImageTensor {
        &self.kernel
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn image_shape(&self) -> Shape {
        Shape::image(self.hr_height, self.hr_width)
    }

    pub fn range_shape(&self) -> Shape {
        Shape::image(self.hr_height / self.scale, self.hr_width / self.scale)
    }

    fn decimate(&self, x: &ImageTensor) -> ImageTensor {
        let s = self.scale;
        let r = self.range_shape();
        ImageTensor::from_fn(r.height, r.width, |i, j| x.get(i * s, j * s))
    }

    fn upsample(&self, r: &ImageTensor) -> ImageTensor {
        let s = self.scale;
        let mut out = ImageTensor::zeros(self.hr_height, self.hr_width);
        for i in 0..r.height() {
            for j in 0..r.width() {
                out.set(i * s, j * s, r.get(i, j));
            }
        }
        out
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        x.ensure_shape(self.image_shape())?;
        Ok(self.decimate(&conv2d(x, &self.kernel, Padding::Circular)?))
    }

    pub fn adjoint(&self, r: &ImageTensor) -> Result<ImageTensor> {
        r.ensure_shape(self.range_shape())?;
        correlate2d(&self.upsample(r), &self.kernel, Padding::Circular)
    }

    /// `A^T A x`
    pub fn normal(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.adjoint(&self.apply(x)?)
    }

    /// `(gamma A^T A + I)^{-1} rhs` via the Woodbury identity
    /// `I - gamma A^T (I + gamma A A^T)^{-1} A`, where `A A^T` is circulant on
    /// the low-res grid and is inverted bin by bin.
    pub fn solve_shifted(&self, rhs: &ImageTensor, gamma: f64) -> Result<ImageTensor> {
        let low = self.apply(rhs)?;
        let mut spectrum: ComplexImageTensor = dft2(&low);
        for (c, &p) in spectrum.data_mut().iter_mut().zip(&self.aliased_power) {
            *c /= 1.0 + gamma * p;
        }
        let inner = idft2(&spectrum).real();
        let correction = self.adjoint(&inner)?;
        Ok(rhs.axpby(1.0, &correction, -gamma))
    }
}
