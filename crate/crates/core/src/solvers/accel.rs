use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::numerics::ImageTensor;

/// Ridge added to the Anderson normal equations, relative to their largest
/// diagonal entry.
pub const ANDERSON_RIDGE: f64 = 1e-10;

/// `current + (k - 1) / (k + 2) * (current - previous)`, for `k >= 1`.
pub fn nesterov_update(current: &ImageTensor, previous: &ImageTensor, k: usize) -> ImageTensor {
    assert!(k >= 1, "Nesterov extrapolation is indexed from 1");
    let w = (k as f64 - 1.0) / (k as f64 + 2.0);
    current.zip_map(previous, |c, p| c + w * (c - p))
}

/// One type-II Anderson mixing step over `history`, the `(x_i, T(x_i))` pairs
/// from oldest to newest. Only the newest `memory` pairs are mixed. Falls back
/// to the plain step `T(x_newest)` when the least-squares system is
/// numerically singular.
pub fn anderson_update(history: &[(ImageTensor, ImageTensor)], memory: usize, relaxation: f64) -> ImageTensor {
    assert!(memory >= 1 && !history.is_empty());
    let window = &history[history.len().saturating_sub(memory)..];
    let (x_last, f_last) = window.last().expect("nonempty");
    let plain = || x_last.axpby(1.0 - relaxation, f_last, relaxation);
    if window.len() == 1 {
        return plain();
    }
    let residuals: Vec<ImageTensor> = window.iter().map(|(x, f)| f - x).collect();
    match mixing_weights(&residuals) {
        Some(alpha) => {
            let mut fx = ImageTensor::zeros_shape(x_last.shape());
            let mut xx = ImageTensor::zeros_shape(x_last.shape());
            for ((x, f), &a) in window.iter().zip(alpha.iter()) {
                fx.add_scaled(a, f);
                xx.add_scaled(a, x);
            }
            xx.axpby(1.0 - relaxation, &fx, relaxation)
        }
        None => plain(),
    }
}

/// `argmin ||sum_i alpha_i g_i||` subject to `sum_i alpha_i = 1`.
fn mixing_weights(residuals: &[ImageTensor]) -> Option<Vec<f64>> {
    let n = residuals.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = residuals[i].dot(&residuals[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let scale = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for i in 0..n {
        h[(i, i)] += ANDERSON_RIDGE * scale;
    }
    let u = h.cholesky()?.solve(&DVector::from_element(n, 1.0));
    let total: f64 = u.iter().sum();
    if !total.is_finite() || total.abs() < f64::EPSILON {
        return None;
    }
    let alpha: Vec<f64> = u.iter().map(|v| v / total).collect();
    alpha.iter().all(|a| a.is_finite()).then_some(alpha)
}

/// Rolling iterate history for [`anderson_update`].
#[derive(Debug, Clone)]
pub struct Anderson {
    memory: usize,
    relaxation: f64,
    history: VecDeque<(ImageTensor, ImageTensor)>,
}

impl Anderson {
    pub fn new(memory: usize, relaxation: f64) -> Self {
        assert!(memory >= 1, "Anderson memory must be at least 1");
        Anderson {
            memory,
            relaxation,
            history: VecDeque::with_capacity(memory + 1),
        }
    }

    /// Records `(x, T(x))` and returns the next point to evaluate.
    pub fn step(&mut self, x: ImageTensor, fx: ImageTensor) -> ImageTensor {
        self.history.push_back((x, fx));
        while self.history.len() > self.memory {
            self.history.pop_front();
        }
        anderson_update(self.history.make_contiguous(), self.memory, self.relaxation)
    }
}
