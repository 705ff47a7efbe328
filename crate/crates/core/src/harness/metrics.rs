use crate::error::Result;
use crate::numerics::ImageTensor;

pub fn mse(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    x.ensure_shape(reference.shape())?;
    Ok((x - reference).norm_sq() / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB for images on the [0, 1] scale. An exact
/// match gives `f64::INFINITY`.
pub fn psnr(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    let m = mse(x, reference)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Mean of `values`, summed pairwise so the result does not depend on how
/// the caller chunked its work.
pub fn mean(values: &[f64]) -> f64 {
    fn pairwise(v: &[f64]) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0],
            n => pairwise(&v[..n / 2]) + pairwise(&v[n / 2..]),
        }
    }
    if values.is_empty() {
        f64::NAN
    } else {
        pairwise(values) / values.len() as f64
    }
}
