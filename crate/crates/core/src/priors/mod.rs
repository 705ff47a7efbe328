//! The CNN image prior `D`: a plain stack of 3x3 convolutions with ReLU
//! activations that predicts the noise and subtracts it from the input.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DmbaError, Result};
use crate::numerics::{ConvGeometry, ImageTensor, ParamBlock, ParamVector, Shape, Tape, Var};

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Number of convolution layers.
    pub depth: usize,
    /// Channels of every hidden layer.
    pub width: usize,
    pub kernel_size: usize,
    /// Output `x - N(x)` rather than `N(x)`.
    pub residual: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 7,
            width: 32,
            kernel_size: 3,
            residual: true,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "depth={} width={} kernel={} residual={}",
            self.depth, self.width, self.kernel_size, self.residual
        )
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.width == 0 {
            return Err(DmbaError::InvalidArgument(format!(
                "need depth >= 2 and width >= 1, got {self}"
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(DmbaError::EvenKernel {
                height: self.kernel_size,
                width: self.kernel_size,
            });
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> ConvGeometry {
        let in_channels = if index == 0 { 1 } else { self.width };
        let out_channels = if index + 1 == self.depth { 1 } else { self.width };
        ConvGeometry {
            in_channels,
            out_channels,
            kernel: self.kernel_size,
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.depth)
            .map(|i| {
                let g = self.layer(i);
                g.weight_len() + g.out_channels
            })
            .sum()
    }

    /// Parameter layout with every value zero.
    pub fn zero_params(&self) -> ParamVector {
        let mut params = ParamVector::new();
        for i in 0..self.depth {
            let g = self.layer(i);
            let k = g.kernel;
            params
                .push(ParamBlock::zeros(
                    format!("conv{i}.weight"),
                    vec![g.out_channels, g.in_channels, k, k],
                ))
                .expect("layer names are unique");
            params
                .push(ParamBlock::zeros(format!("conv{i}.bias"), vec![g.out_channels]))
                .expect("layer names are unique");
        }
        params
    }
}

/// How a set of weights was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingKind {
    Untrained,
    /// AWGN denoiser; noise level on the 0-255 scale.
    Awgn { sigma: f64 },
    /// Deep-equilibrium artifact-removal prior trained under the named
    /// operator descriptor and regularization strength.
    Deq { train_operator: String, tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorMetadata {
    pub kind: TrainingKind,
    pub seed: u64,
}

impl Default for PriorMetadata {
    fn default() -> Self {
        PriorMetadata {
            kind: TrainingKind::Untrained,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    params: ParamVector,
    pub metadata: PriorMetadata,
}

impl DenoiserNet {
    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn kaiming(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = arch.zero_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..arch.depth {
            let g = arch.layer(i);
            let fan_in = (g.in_channels * g.kernel * g.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite deviation");
            for v in &mut params.block_mut(2 * i).data {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(DenoiserNet {
            arch,
            params,
            metadata: PriorMetadata {
                kind: TrainingKind::Untrained,
                seed,
            },
        })
    }

    /// All parameters zero; in residual mode this is exactly the identity.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(DenoiserNet {
            arch,
            params: arch.zero_params(),
            metadata: PriorMetadata::default(),
        })
    }

    pub fn from_params(arch: Architecture, params: ParamVector, metadata: PriorMetadata) -> Result<Self> {
        arch.validate()?;
        if !params.same_layout(&arch.zero_params()) {
            return Err(DmbaError::ArchMismatch {
                expected: arch.to_string(),
                found: format!("{} blocks / {} values", params.num_blocks(), params.total_len()),
            });
        }
        Ok(DenoiserNet {
            arch,
            params,
            metadata,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.channels() != 1 {
            return Err(DmbaError::shape(Shape::image(x.height(), x.width()), x.shape()));
        }
        Ok(())
    }

    /// `D(x)`
    pub fn denoise(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for i in 0..self.arch.depth {
            let (out, _) = crate::numerics::conv::conv_layer_forward(
                &h,
                self.arch.layer(i),
                &self.params.block(2 * i).data,
                &self.params.block(2 * i + 1).data,
            )?;
            h = if i + 1 < self.arch.depth {
                out.map(|v| v.max(0.0))
            } else {
                out
            };
        }
        Ok(if self.arch.residual {
            x.axpby(1.0, &h, -1.0)
        } else {
            h
        })
    }

    /// `x - D(x)`
    pub fn residual(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let d = self.denoise(x)?;
        Ok(x - &d)
    }

    /// `D(x)` recorded on a fresh tape whose input is `x`.
    pub fn denoise_traced(&self, x: &ImageTensor) -> Result<(ImageTensor, Tape)> {
        self.check_input(x)?;
        let mut tape = Tape::with_params(self.params.clone());
        let input = tape.input(x.clone());
        let out = self.record(&mut tape, input)?;
        Ok((tape.value(out).clone(), tape))
    }

    /// Appends `D(x)` to `tape`, which must carry this network's parameters.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        if !tape.params().same_layout(&self.params) {
            return Err(DmbaError::ArchMismatch {
                expected: self.arch.to_string(),
                found: "tape parameters with a different layout".into(),
            });
        }
        let mut h = x;
        for i in 0..self.arch.depth {
            h = tape.conv_layer(h, self.arch.layer(i), 2 * i, 2 * i + 1)?;
            if i + 1 < self.arch.depth {
                h = tape.relu(h);
            }
        }
        if self.arch.residual {
            tape.axpby(x, 1.0, h, -1.0)
        } else {
            Ok(h)
        }
    }
}

/// Regularization strength paired with a description of the prior backing `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    tau: f64,
    pub description: String,
}

impl PriorConfig {
    pub fn new(tau: f64, description: impl Into<String>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(DmbaError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(PriorConfig {
            tau,
            description: description.into(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[cfg(test)]
mod tests;
