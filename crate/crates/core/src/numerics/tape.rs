//! Primitive-level reverse-mode differentiation.
//!
//! A [`Tape`] records a straight-line computation on [`ImageTensor`]s:
//! element-wise affine combinations, ReLU, fixed-kernel convolution, network
//! convolution layers whose weights live in a [`ParamVector`], and opaque
//! linear maps that supply their own adjoint. Nodes are appended in evaluation
//! order, so walking them backwards is a reverse topological order.
//!
//! [`Tape::vjp`] consumes the tape for a single reverse pass. Callers that
//! need many vector-Jacobian products at the same linearization point (the
//! adjoint fixed-point solve) freeze the tape into a [`Linearization`] instead.

use std::fmt;
use std::sync::Arc;

use crate::error::{DmbaError, Result};

use super::conv::{
    conv2d, conv_layer_backward_input, conv_layer_backward_params, conv_layer_forward,
    correlate2d, ConvGeometry, Padding,
};
use super::params::ParamVector;
use super::tensor::ImageTensor;

/// A linear map with an explicit adjoint, recorded as a single tape node.
pub trait LinearMap: Send + Sync {
    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor>;
    fn apply_adjoint(&self, y: &ImageTensor) -> Result<ImageTensor>;
}

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Constant,
    Scale {
        x: Var,
        factor: f64,
    },
    Axpby {
        a: Var,
        alpha: f64,
        b: Var,
        beta: f64,
    },
    AddConst {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Conv2d {
        x: Var,
        kernel: ImageTensor,
        padding: Padding,
    },
    ConvLayer {
        x: Var,
        geometry: ConvGeometry,
        weight: usize,
        bias: usize,
        cols: Vec<f64>,
    },
    Linear {
        x: Var,
        map: Arc<dyn LinearMap>,
    },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Scale { .. } => "scale",
            Op::Axpby { .. } => "axpby",
            Op::AddConst { .. } => "add_const",
            Op::Relu { .. } => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvLayer { .. } => "conv_layer",
            Op::Linear { .. } => "linear",
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: ImageTensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input: Option<Var>,
    params: ParamVector,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose convolution layers read their weights from `params`.
    pub fn with_params(params: ParamVector) -> Self {
        Tape {
            params,
            ..Self::default()
        }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ImageTensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ImageTensor {
        &self.nodes[v.0].value
    }

    /// Registers the differentiated input. A tape has exactly one.
    pub fn input(&mut self, x: ImageTensor) -> Var {
        assert!(self.input.is_none(), "tape input recorded twice");
        let v = self.push(Op::Input, x);
        self.input = Some(v);
        v
    }

    pub fn constant(&mut self, x: ImageTensor) -> Var {
        self.push(Op::Constant, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push(Op::Scale { x, factor }, value)
    }

    /// `alpha * a + beta * b`
    pub fn axpby(&mut self, a: Var, alpha: f64, b: Var, beta: f64) -> Result<Var> {
        self.value(b).ensure_shape(self.value(a).shape())?;
        let value = self.value(a).axpby(alpha, self.value(b), beta);
        Ok(self.push(Op::Axpby { a, alpha, b, beta }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpby(a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpby(a, 1.0, b, -1.0)
    }

    /// Adds a constant offset; no gradient flows into the offset.
    pub fn add_const(&mut self, x: Var, offset: &ImageTensor) -> Result<Var> {
        offset.ensure_shape(self.value(x).shape())?;
        let value = self.value(x) + offset;
        Ok(self.push(Op::AddConst { x }, value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu { x }, value)
    }

    /// Convolution with a fixed (non-trainable) kernel.
    pub fn conv2d(&mut self, x: Var, kernel: &ImageTensor, padding: Padding) -> Result<Var> {
        let value = conv2d(self.value(x), kernel, padding)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel: kernel.clone(),
                padding,
            },
            value,
        ))
    }

    /// Network convolution layer with weights from parameter blocks `weight` and `bias`.
    pub fn conv_layer(
        &mut self,
        x: Var,
        geometry: ConvGeometry,
        weight: usize,
        bias: usize,
    ) -> Result<Var> {
        let (value, cols) = conv_layer_forward(
            self.value(x),
            geometry,
            &self.params.block(weight).data,
            &self.params.block(bias).data,
        )?;
        Ok(self.push(
            Op::ConvLayer {
                x,
                geometry,
                weight,
                bias,
                cols,
            },
            value,
        ))
    }

    pub fn linear(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let value = map.apply(self.value(x))?;
        Ok(self.push(Op::Linear { x, map }, value))
    }

    /// Value of the last recorded node.
    pub fn output(&self) -> Option<&ImageTensor> {
        self.nodes.last().map(|n| &n.value)
    }

    /// Single reverse pass from the last recorded node. Returns the gradient
    /// with respect to the registered input and, when the tape carries
    /// parameters, with respect to every parameter block.
    pub fn vjp(self, seed: &ImageTensor) -> Result<(ImageTensor, ParamVector)> {
        self.reverse(seed, true)
    }

    /// Freezes the tape for repeated reverse passes at the same point.
    pub fn freeze(self) -> Result<Linearization> {
        if self.input.is_none() {
            return Err(DmbaError::EmptyTape);
        }
        Ok(Linearization { tape: self })
    }

    fn reverse(&self, seed: &ImageTensor, with_params: bool) -> Result<(ImageTensor, ParamVector)> {
        let input = self.input.ok_or(DmbaError::EmptyTape)?;
        let last = self.nodes.len() - 1;
        seed.ensure_shape(self.nodes[last].value.shape())?;

        let mut grads: Vec<Option<ImageTensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[last] = Some(seed.clone());
        let mut grad_params = if with_params {
            self.params.zeros_like()
        } else {
            ParamVector::new()
        };

        for idx in (0..=last).rev() {
            if idx == input.0 {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input | Op::Constant => {}
                Op::Scale { x, factor } => accumulate(&mut grads, *x, g.scale(*factor)),
                Op::Axpby { a, alpha, b, beta } => {
                    accumulate(&mut grads, *b, g.scale(*beta));
                    accumulate(&mut grads, *a, g.scale(*alpha));
                }
                Op::AddConst { x } => accumulate(&mut grads, *x, g),
                Op::Relu { x } => {
                    let out = &self.nodes[idx].value;
                    let masked = g.zip_map(out, |gv, ov| if ov > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, masked);
                }
                Op::Conv2d { x, kernel, padding } => {
                    accumulate(&mut grads, *x, correlate2d(&g, kernel, *padding)?);
                }
                Op::ConvLayer {
                    x,
                    geometry,
                    weight,
                    bias,
                    cols,
                } => {
                    if with_params {
                        let (gw, gb) = split_two(&mut grad_params, *weight, *bias);
                        conv_layer_backward_params(&g, *geometry, cols, gw, gb);
                    }
                    if !matches!(self.nodes[x.0].op, Op::Constant) {
                        let w = &self.params.block(*weight).data;
                        let input_shape = self.nodes[x.0].value.shape();
                        accumulate(
                            &mut grads,
                            *x,
                            conv_layer_backward_input(&g, *geometry, w, input_shape),
                        );
                    }
                }
                Op::Linear { x, map } => accumulate(&mut grads, *x, map.apply_adjoint(&g)?),
            }
        }

        let grad_input = grads[input.0]
            .take()
            .unwrap_or_else(|| ImageTensor::zeros_shape(self.nodes[input.0].value.shape()));
        Ok((grad_input, grad_params))
    }
}

fn accumulate(grads: &mut [Option<ImageTensor>], v: Var, g: ImageTensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_scaled(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn split_two(params: &mut ParamVector, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    let blocks = params.blocks_mut();
    if a < b {
        let (lo, hi) = blocks.split_at_mut(b);
        (&mut lo[a].data, &mut hi[0].data)
    } else {
        let (lo, hi) = blocks.split_at_mut(a);
        (&mut hi[0].data, &mut lo[b].data)
    }
}

/// A frozen tape supporting any number of reverse passes.
#[derive(Debug)]
pub struct Linearization {
    tape: Tape,
}

impl Linearization {
    pub fn output(&self) -> &ImageTensor {
        self.tape.output().expect("frozen tape has an input node")
    }

    pub fn params(&self) -> &ParamVector {
        &self.tape.params
    }

    /// `(J_x^T seed, J_theta^T seed)`
    pub fn vjp(&self, seed: &ImageTensor) -> Result<(ImageTensor, ParamVector)> {
        self.tape.reverse(seed, true)
    }

    /// `J_x^T seed` only; skips the weight-gradient products.
    pub fn vjp_input(&self, seed: &ImageTensor) -> Result<ImageTensor> {
        self.tape.reverse(seed, false).map(|(g, _)| g)
    }
}
