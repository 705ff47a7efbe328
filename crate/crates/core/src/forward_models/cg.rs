use crate::error::{DmbaError, Result};
use crate::numerics::ImageTensor;

/// Conjugate gradients for a symmetric positive-definite `apply`, started from
/// zero. Returns once the true residual satisfies `||b - A x|| <= tol ||b||`.
pub fn conjugate_gradient(
    apply: impl Fn(&ImageTensor) -> Result<ImageTensor>,
    b: &ImageTensor,
    tol: f64,
    max_iter: usize,
) -> Result<ImageTensor> {
    let b_norm = b.norm();
    let mut x = ImageTensor::zeros_shape(b.shape());
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    let mut residual = 1.0;
    for _ in 0..max_iter {
        let ap = apply(&p)?;
        let alpha = rs / p.dot(&ap);
        x.add_scaled(alpha, &p);
        r.add_scaled(-alpha, &ap);
        let mut rs_new = r.norm_sq();
        if rs_new.sqrt() <= tol * b_norm {
            // The recursive residual drifts from the true one; confirm, and
            // restart from the true residual if they disagree.
            r = b - &apply(&x)?;
            residual = r.norm() / b_norm;
            if residual <= tol {
                return Ok(x);
            }
            rs_new = r.norm_sq();
            p = r.clone();
            rs = rs_new;
            continue;
        }
        residual = rs_new.sqrt() / b_norm;
        p = r.axpby(1.0, &p, rs_new / rs);
        rs = rs_new;
    }
    Err(DmbaError::MaxIterationsExceeded {
        iterations: max_iter,
        tol,
        residual,
    })
}
