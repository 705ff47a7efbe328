//! Same-size 2-D convolutions.
//!
//! [`conv2d`] is a true convolution (kernel flipped) of a single-channel image
//! with a small odd kernel, used by the blur operators. [`conv_layer_forward`]
//! and friends are the multi-channel cross-correlation layers of the denoiser
//! network, evaluated as im2col followed by a matrix product.

use crate::error::{DmbaError, Result};

use super::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Circular,
    Zero,
}

fn check_kernel(x: &ImageTensor, kernel: &ImageTensor) -> Result<()> {
    let (kh, kw) = (kernel.height(), kernel.width());
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(DmbaError::EvenKernel {
            height: kh,
            width: kw,
        });
    }
    if kh > x.height() || kw > x.width() {
        return Err(DmbaError::KernelTooLarge {
            kernel: kernel.shape(),
            image: x.shape(),
        });
    }
    if kernel.channels() != 1 {
        return Err(DmbaError::shape(
            Shape::image(kh, kw),
            kernel.shape(),
        ));
    }
    Ok(())
}

/// `flip = true` gives convolution, `flip = false` cross-correlation.
fn filter(x: &ImageTensor, kernel: &ImageTensor, padding: Padding, flip: bool) -> ImageTensor {
    let (h, w) = (x.height(), x.width());
    let (kh, kw) = (kernel.height(), kernel.width());
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = ImageTensor::zeros_shape(x.shape());
    let n = h * w;
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = &mut out.data_mut()[c * n..(c + 1) * n];
        for a in 0..kh {
            for b in 0..kw {
                let tap = kernel.get(a, b);
                if tap == 0.0 {
                    continue;
                }
                // Offset of the source pixel relative to the output pixel.
                let (di, dj) = if flip {
                    (ch - a as isize, cw - b as isize)
                } else {
                    (a as isize - ch, b as isize - cw)
                };
                for i in 0..h {
                    let si = i as isize + di;
                    let si = match padding {
                        Padding::Circular => si.rem_euclid(h as isize) as usize,
                        Padding::Zero => {
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            si as usize
                        }
                    };
                    let src_row = &src[si * w..(si + 1) * w];
                    let dst_row = &mut dst[i * w..(i + 1) * w];
                    for (j, d) in dst_row.iter_mut().enumerate() {
                        let sj = j as isize + dj;
                        let sj = match padding {
                            Padding::Circular => sj.rem_euclid(w as isize) as usize,
                            Padding::Zero => {
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                sj as usize
                            }
                        };
                        *d += tap * src_row[sj];
                    }
                }
            }
        }
    }
    out
}

/// Same-shape convolution `y[i,j] = sum_{a,b} k[a,b] x[i-a+c, j-b+c]`.
pub fn conv2d(x: &ImageTensor, kernel: &ImageTensor, padding: Padding) -> Result<ImageTensor> {
    check_kernel(x, kernel)?;
    Ok(filter(x, kernel, padding, true))
}

/// Cross-correlation with `kernel`; the adjoint of [`conv2d`] for the same padding.
pub fn correlate2d(x: &ImageTensor, kernel: &ImageTensor, padding: Padding) -> Result<ImageTensor> {
    check_kernel(x, kernel)?;
    Ok(filter(x, kernel, padding, false))
}

/// Shape of a multi-channel convolution layer's weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unrolls zero-padded `kernel x kernel` neighbourhoods into a
/// `(cin*k*k) x (h*w)` row-major matrix.
fn im2col(x: &ImageTensor, k: usize) -> Vec<f64> {
    let (cin, h, w) = (x.channels(), x.height(), x.width());
    let n = h * w;
    let half = (k / 2) as isize;
    let mut cols = vec![0.0; cin * k * k * n];
    for c in 0..cin {
        let src = x.channel(c);
        for a in 0..k {
            for b in 0..k {
                let row = &mut cols[((c * k + a) * k + b) * n..((c * k + a) * k + b + 1) * n];
                let di = a as isize - half;
                let dj = b as isize - half;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w as isize - dj).min(w as isize).max(0) as usize;
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let si = si as usize;
                    if j_lo >= j_hi {
                        continue;
                    }
                    let s0 = (j_lo as isize + dj) as usize;
                    row[i * w + j_lo..i * w + j_hi]
                        .copy_from_slice(&src[si * w + s0..si * w + s0 + (j_hi - j_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns back onto the image.
fn col2im(cols: &[f64], shape: Shape, k: usize) -> ImageTensor {
    let (cin, h, w) = (shape.channels, shape.height, shape.width);
    let n = h * w;
    let half = (k / 2) as isize;
    let mut out = ImageTensor::zeros_shape(shape);
    let data = out.data_mut();
    for c in 0..cin {
        let dst = &mut data[c * n..(c + 1) * n];
        for a in 0..k {
            for b in 0..k {
                let row = &cols[((c * k + a) * k + b) * n..((c * k + a) * k + b + 1) * n];
                let di = a as isize - half;
                let dj = b as isize - half;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w as isize - dj).min(w as isize).max(0) as usize;
                if j_lo >= j_hi {
                    continue;
                }
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let si = si as usize;
                    let s0 = (j_lo as isize + dj) as usize;
                    let d = &mut dst[si * w + s0..si * w + s0 + (j_hi - j_lo)];
                    for (dv, sv) in d.iter_mut().zip(&row[i * w + j_lo..i * w + j_hi]) {
                        *dv += sv;
                    }
                }
            }
        }
    }
    out
}

/// `c = alpha * op(a) * op(b) + beta * c`, row-major, `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reached through these
    // strides lies inside the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded same-size multi-channel cross-correlation plus bias. Returns the
/// output and the unrolled input patches needed by the weight gradient.
pub fn conv_layer_forward(
    x: &ImageTensor,
    geometry: ConvGeometry,
    weight: &[f64],
    bias: &[f64],
) -> Result<(ImageTensor, Vec<f64>)> {
    if x.channels() != geometry.in_channels {
        return Err(DmbaError::shape(
            Shape::new(geometry.in_channels, x.height(), x.width()),
            x.shape(),
        ));
    }
    debug_assert_eq!(weight.len(), geometry.weight_len());
    debug_assert_eq!(bias.len(), geometry.out_channels);
    let n = x.shape().pixels();
    let cols = im2col(x, geometry.kernel);
    let mut out = vec![0.0; geometry.out_channels * n];
    for (o, chunk) in out.chunks_exact_mut(n).enumerate() {
        chunk.fill(bias[o]);
    }
    gemm(
        geometry.out_channels,
        geometry.patch_len(),
        n,
        weight,
        false,
        &cols,
        false,
        1.0,
        &mut out,
    );
    let shape = Shape::new(geometry.out_channels, x.height(), x.width());
    Ok((ImageTensor::from_shape_vec(shape, out)?, cols))
}

/// Gradient with respect to the layer input.
pub fn conv_layer_backward_input(
    grad_out: &ImageTensor,
    geometry: ConvGeometry,
    weight: &[f64],
    input_shape: Shape,
) -> ImageTensor {
    let n = input_shape.pixels();
    let mut dcols = vec![0.0; geometry.patch_len() * n];
    gemm(
        geometry.patch_len(),
        geometry.out_channels,
        n,
        weight,
        true,
        grad_out.data(),
        false,
        0.0,
        &mut dcols,
    );
    col2im(&dcols, input_shape, geometry.kernel)
}

/// Accumulates weight and bias gradients into `grad_weight` / `grad_bias`.
pub fn conv_layer_backward_params(
    grad_out: &ImageTensor,
    geometry: ConvGeometry,
    cols: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let n = grad_out.shape().pixels();
    gemm(
        geometry.out_channels,
        n,
        geometry.patch_len(),
        grad_out.data(),
        false,
        cols,
        true,
        1.0,
        grad_weight,
    );
    for (o, chunk) in grad_out.data().chunks_exact(n).enumerate() {
        grad_bias[o] += chunk.iter().sum::<f64>();
    }
}
