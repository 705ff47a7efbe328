use crate::error::{DmbaError, Result};

use super::params::ParamVector;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamVector,
    v: ParamVector,
}

impl Adam {
    /// Standard moments (0.9, 0.999) and `eps = 1e-8`; state shaped like `layout`.
    pub fn new(learning_rate: f64, layout: &ParamVector) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(DmbaError::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: layout.zeros_like(),
            v: layout.zeros_like(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if !params.same_layout(&self.m) || !grad.same_layout(&self.m) {
            return Err(DmbaError::InvalidArgument(
                "parameter or gradient layout differs from the optimizer state".into(),
            ));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.learning_rate;
        let eps = self.eps;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}
