use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{DmbaError, Result};

/// Channel, height and width of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn image(height: usize, width: usize) -> Self {
        Shape::new(1, height, width)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued image or feature map, stored channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::zeros_shape(Shape::image(height, width))
    }

    pub fn zeros_shape(shape: Shape) -> Self {
        ImageTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageTensor {
            shape: Shape::image(height, width),
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_shape_vec(Shape::image(height, width), data)
    }

    pub fn from_shape_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(DmbaError::InvalidArgument(format!(
                "buffer of {} elements does not fill shape {shape}",
                data.len()
            )));
        }
        Ok(ImageTensor { shape, data })
    }

    /// Builds a single-channel image from a per-pixel function of (row, col).
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        ImageTensor {
            shape: Shape::image(height, width),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let w = self.shape.width;
        self.data[row * w + col] = value;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(DmbaError::shape(expected, self.shape))
        }
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> ImageTensor {
        assert_eq!(self.shape, other.shape, "zip_map on mismatched shapes");
        ImageTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `alpha * self + beta * other`
    pub fn axpby(&self, alpha: f64, other: &ImageTensor, beta: f64) -> ImageTensor {
        self.zip_map(other, |a, b| alpha * a + beta * b)
    }

    /// In-place `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ImageTensor) {
        assert_eq!(self.shape, other.shape, "add_scaled on mismatched shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, factor: f64) -> ImageTensor {
        self.map(|v| v * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageTensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Copies a `size_h x size_w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size_h: usize, size_w: usize) -> Result<ImageTensor> {
        if row + size_h > self.height() || col + size_w > self.width() {
            return Err(DmbaError::InvalidArgument(format!(
                "crop {size_h}x{size_w} at ({row},{col}) exceeds {}",
                self.shape
            )));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(c * size_h * size_w);
        for ch in 0..c {
            let plane = self.channel(ch);
            for i in row..row + size_h {
                let start = i * self.width() + col;
                data.extend_from_slice(&plane[start..start + size_w]);
            }
        }
        Ok(ImageTensor {
            shape: Shape::new(c, size_h, size_w),
            data,
        })
    }

    pub fn transpose(&self) -> ImageTensor {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(self.len());
        for ch in 0..self.channels() {
            let plane = self.channel(ch);
            for j in 0..w {
                for i in 0..h {
                    out.push(plane[i * w + j]);
                }
            }
        }
        ImageTensor {
            shape: Shape::new(self.channels(), w, h),
            data: out,
        }
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        let w = self.width();
        let mut out = self.clone();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        out
    }
}

impl Add for &ImageTensor {
    type Output = ImageTensor;
    fn add(self, rhs: &ImageTensor) -> ImageTensor {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ImageTensor {
    type Output = ImageTensor;
    fn sub(self, rhs: &ImageTensor) -> ImageTensor {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ImageTensor {
    type Output = ImageTensor;
    fn mul(self, rhs: f64) -> ImageTensor {
        self.scale(rhs)
    }
}

/// Complex-valued counterpart of [`ImageTensor`], produced by Fourier-domain operations.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImageTensor {
    shape: Shape,
    data: Vec<Complex64>,
}

impl ComplexImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::zeros_shape(Shape::image(height, width))
    }

    pub fn zeros_shape(shape: Shape) -> Self {
        ComplexImageTensor {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_shape_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(DmbaError::InvalidArgument(format!(
                "buffer of {} elements does not fill shape {shape}",
                data.len()
            )));
        }
        Ok(ComplexImageTensor { shape, data })
    }

    pub fn from_real(x: &ImageTensor) -> Self {
        ComplexImageTensor {
            shape: x.shape(),
            data: x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(DmbaError::shape(expected, self.shape))
        }
    }

    pub fn real(&self) -> ImageTensor {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    pub fn imag(&self) -> ImageTensor {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|c| c.im).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Real part of the Hermitian inner product, `Re <self, other>`.
    pub fn real_dot(&self, other: &ComplexImageTensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn zip_map(
        &self,
        other: &ComplexImageTensor,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> ComplexImageTensor {
        assert_eq!(self.shape, other.shape, "zip_map on mismatched shapes");
        ComplexImageTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ComplexImageTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
