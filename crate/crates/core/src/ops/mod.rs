//! Forward kernels and their vector-Jacobian products.
//!
//! Every differentiable operation is a variant of [`Op`]. Learnable tensors
//! (kernels, biases, BN affine terms, dense weights) are ordinary inputs, so a
//! single [`vjp`] call returns cotangents for data and parameters alike.
//! Constants such as stride or running statistics live in the variant.

mod conv;
mod dense;
mod norm;
mod pointwise;
mod pool;

use crate::error::{Error, Result};
use crate::params::{Activation, BnParams, ConvParams, DenseParams};
use crate::tensor::{Scalar, Tensor};

pub(crate) use dense::argmax;

#[derive(Debug, Clone, PartialEq)]
pub enum Op<T: Scalar = f32> {
    /// Inputs: `[x, kernel, bias]`.
    Conv2d {
        stride: usize,
        padding: usize,
    },
    /// Inputs: `[x, gamma, beta]`.
    BnRelu {
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
        epsilon: T,
    },
    /// Inputs: `[x, weight, bias]`.
    Dense {
        activation: Activation,
    },
    GlobalAvgPool,
    Add,
    Sub,
    /// Element-wise product; the second operand may be a length-`C` vector
    /// broadcast over the spatial positions of an `H x W x C` first operand.
    Mul,
    /// `H x W x C` map times an `H x W x 1` map broadcast over channels.
    SpatialGate,
    /// Channel concatenation of any number of rank-3 maps, or plain
    /// concatenation of rank-1 vectors.
    Concat,
    SliceChannels {
        start: usize,
        len: usize,
    },
    Upsample2,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ChannelMean,
    ChannelMax,
    Sigmoid,
    Scale {
        factor: T,
    },
    Softmax,
    /// Cross-entropy of a logit vector against a class index; output `[1]`.
    CrossEntropy {
        label: usize,
    },
    SumSquares,
    /// Index of the largest element, as a `[1]` tensor. Not differentiable.
    Argmax,
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::BnRelu { .. } => "bn_relu",
            Op::Dense { .. } => "dense",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Add => "ewise_add",
            Op::Sub => "ewise_sub",
            Op::Mul => "ewise_mul",
            Op::SpatialGate => "spatial_gate",
            Op::Concat => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Upsample2 => "upsample2_nearest",
            Op::MaxPool { .. } => "maxpool",
            Op::ChannelMean => "channel_mean",
            Op::ChannelMax => "channel_max",
            Op::Sigmoid => "sigmoid",
            Op::Scale { .. } => "scale",
            Op::Softmax => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumSquares => "sum_squares",
            Op::Argmax => "argmax",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Conv2d { .. } | Op::BnRelu { .. } | Op::Dense { .. } => Some(3),
            Op::Add | Op::Sub | Op::Mul | Op::SpatialGate => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        match self.arity() {
            Some(a) if a != n => Err(Error::shape(self.name(), "input count", a, n)),
            None if n == 0 => Err(Error::invalid(self.name(), "needs at least one input")),
            _ => Ok(()),
        }
    }
}

pub fn forward<T: Scalar>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    op.check_arity(inputs.len())?;
    match op {
        Op::Conv2d { stride, padding } => conv::forward(inputs[0], inputs[1], inputs[2], *stride, *padding),
        Op::BnRelu {
            running_mean,
            running_var,
            epsilon,
        } => norm::forward(inputs[0], inputs[1], inputs[2], running_mean, running_var, *epsilon),
        Op::Dense { activation } => dense::forward(inputs[0], inputs[1], inputs[2], *activation),
        Op::GlobalAvgPool => pool::gap_forward(inputs[0]),
        Op::Add => pointwise::add(inputs[0], inputs[1], T::one()),
        Op::Sub => pointwise::add(inputs[0], inputs[1], -T::one()),
        Op::Mul => pointwise::mul_forward(inputs[0], inputs[1]),
        Op::SpatialGate => pointwise::gate_forward(inputs[0], inputs[1]),
        Op::Concat => pointwise::concat_forward(inputs),
        Op::SliceChannels { start, len } => pointwise::slice_forward(inputs[0], *start, *len),
        Op::Upsample2 => pool::upsample_forward(inputs[0]),
        Op::MaxPool {
            kernel,
            stride,
            padding,
        } => pool::maxpool_forward(inputs[0], *kernel, *stride, *padding),
        Op::ChannelMean => pool::channel_mean_forward(inputs[0]),
        Op::ChannelMax => pool::channel_max_forward(inputs[0]),
        Op::Sigmoid => Ok(inputs[0].map(sigmoid_scalar)),
        Op::Scale { factor } => Ok(inputs[0].map(|v| v * *factor)),
        Op::Softmax => dense::softmax_forward(inputs[0]),
        Op::CrossEntropy { label } => dense::cross_entropy_forward(inputs[0], *label),
        Op::SumSquares => Ok(Tensor::scalar(inputs[0].data().iter().map(|&v| v * v).sum())),
        Op::Argmax => dense::argmax_forward(inputs[0]),
    }
}

/// Reverse-mode product: given the forward inputs, the forward output and
/// the cotangent of the output, returns one cotangent per input (in input
/// order, parameters included).
pub fn vjp<T: Scalar>(
    op: &Op<T>,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    op.check_arity(inputs.len())?;
    if upstream.shape() != output.shape() {
        return Err(Error::shape(
            op.name(),
            "upstream cotangent length",
            output.len(),
            upstream.len(),
        ));
    }
    let g = upstream;
    match op {
        Op::Conv2d { stride, padding } => {
            conv::vjp(inputs[0], inputs[1], g, *stride, *padding).map(|(a, b, c)| vec![a, b, c])
        }
        Op::BnRelu {
            running_mean,
            running_var,
            epsilon,
        } => Ok(norm::vjp(
            inputs[0],
            inputs[1],
            output,
            g,
            running_mean,
            running_var,
            *epsilon,
        )),
        Op::Dense { activation } => Ok(dense::vjp(inputs[0], inputs[1], output, g, *activation)),
        Op::GlobalAvgPool => pool::gap_vjp(inputs[0], g).map(|d| vec![d]),
        Op::Add => Ok(vec![g.clone(), g.clone()]),
        Op::Sub => Ok(vec![g.clone(), g.map(|v| -v)]),
        Op::Mul => Ok(pointwise::mul_vjp(inputs[0], inputs[1], g)),
        Op::SpatialGate => Ok(pointwise::gate_vjp(inputs[0], inputs[1], g)),
        Op::Concat => Ok(pointwise::concat_vjp(inputs, g)),
        Op::SliceChannels { start, .. } => Ok(vec![pointwise::slice_vjp(inputs[0], g, *start)]),
        Op::Upsample2 => Ok(vec![pool::upsample_vjp(inputs[0], g)]),
        Op::MaxPool {
            kernel,
            stride,
            padding,
        } => Ok(vec![pool::maxpool_vjp(inputs[0], g, *kernel, *stride, *padding)]),
        Op::ChannelMean => Ok(vec![pool::channel_mean_vjp(inputs[0], g)]),
        Op::ChannelMax => Ok(vec![pool::channel_max_vjp(inputs[0], g)]),
        Op::Sigmoid => Ok(vec![Tensor::from_parts(
            g.shape().to_vec(),
            output
                .data()
                .iter()
                .zip(g.data())
                .map(|(&y, &gv)| gv * y * (T::one() - y))
                .collect(),
        )]),
        Op::Scale { factor } => Ok(vec![g.map(|v| v * *factor)]),
        Op::Softmax => Ok(vec![dense::softmax_vjp(output, g)]),
        Op::CrossEntropy { label } => Ok(vec![dense::cross_entropy_vjp(inputs[0], g, *label)]),
        Op::SumSquares => {
            let s = g.data()[0] + g.data()[0];
            Ok(vec![inputs[0].map(|v| v * s)])
        }
        Op::Argmax => Err(Error::NoVjp("argmax")),
    }
}

/// Distance from the evaluation point to the nearest non-differentiable
/// point of `op`: the smallest |pre-activation| for ReLU-style ops, or the
/// smallest positive gap between a window maximum and its runner-up for
/// max-style ops. `None` for smooth ops.
pub fn kink_distance<T: Scalar>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Option<f64> {
    match op {
        Op::BnRelu {
            running_mean,
            running_var,
            epsilon,
        } => Some(norm::min_abs_preactivation(
            inputs[0],
            inputs[1],
            inputs[2],
            running_mean,
            running_var,
            *epsilon,
        )),
        Op::Dense {
            activation: Activation::Relu,
        } => dense::min_abs_preactivation(inputs[0], inputs[1], inputs[2]),
        Op::MaxPool {
            kernel,
            stride,
            padding,
        } => Some(pool::maxpool_min_gap(inputs[0], *kernel, *stride, *padding)),
        Op::ChannelMax => Some(pool::channel_max_min_gap(inputs[0])),
        _ => None,
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

// Convenience wrappers over `forward` for callers that hold parameter structs.

pub fn conv2d<T: Scalar>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    p.validate()?;
    forward(
        &Op::Conv2d {
            stride: p.stride,
            padding: p.padding,
        },
        &[input, &p.kernel, &p.bias],
    )
}

pub fn bn_relu<T: Scalar>(input: &Tensor<T>, p: &BnParams<T>) -> Result<Tensor<T>> {
    p.validate()?;
    forward(&bn_op(p), &[input, &p.gamma, &p.beta])
}

pub(crate) fn bn_op<T: Scalar>(p: &BnParams<T>) -> Op<T> {
    Op::BnRelu {
        running_mean: p.running_mean.clone(),
        running_var: p.running_var.clone(),
        epsilon: p.epsilon,
    }
}

pub fn dense<T: Scalar>(input: &Tensor<T>, p: &DenseParams<T>) -> Result<Tensor<T>> {
    p.validate()?;
    forward(
        &Op::Dense {
            activation: p.activation,
        },
        &[input, &p.weight, &p.bias],
    )
}

pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::GlobalAvgPool, &[input])
}

pub fn upsample2_nearest<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::Upsample2, &[input])
}

pub fn maxpool<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    forward(
        &Op::MaxPool {
            kernel,
            stride,
            padding,
        },
        &[input],
    )
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::Concat, &[a, b])
}

pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    forward(&Op::SliceChannels { start, len }, &[input])
}

pub fn ewise_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::Add, &[a, b])
}

pub fn ewise_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::Mul, &[a, b])
}

pub fn spatial_gate<T: Scalar>(a: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::SpatialGate, &[a, gate])
}

pub fn channel_mean<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::ChannelMean, &[input])
}

pub fn channel_max<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::ChannelMax, &[input])
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    forward(&Op::Softmax, &[logits])
}
