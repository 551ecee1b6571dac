//! Learnable layer parameters and the path scheme used to address them.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Whether a tensor is updated by the optimizer or is a running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Learnable,
    Buffer,
}

/// Structured parameter collections expose their tensors by dotted path,
/// e.g. `neck.spff.pre.kernel`.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind));

    fn learnable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, kind| {
            if kind == ParamKind::Learnable {
                n += t.len();
            }
        });
        n
    }
}

pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Convolution over `H x W x Cin` maps; kernel layout is `k x k x Cin x Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
        };
        p.validate()?;
        Ok(p)
    }

    /// Kaiming-uniform kernel, zero bias.
    pub fn init(rng: &mut impl Rng, k: usize, cin: usize, cout: usize, stride: usize, padding: usize) -> Result<Self> {
        let bound = (6.0 / (k * k * cin) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let kernel = Tensor::from_fn(&[k, k, cin, cout], |_| T::from_f64_lossy(dist.sample(rng)))?;
        Self::new(kernel, Tensor::zeros(&[cout])?, stride, padding)
    }

    pub fn zeroed(k: usize, cin: usize, cout: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[k, k, cin, cout])?,
            Tensor::zeros(&[cout])?,
            stride,
            padding,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let [k, kw, _, cout] = self.kernel.shape()[..] else {
            return Err(Error::shape("conv2d", "kernel rank", 4, self.kernel.rank()));
        };
        if k != kw {
            return Err(Error::shape("conv2d", "kernel width", k, kw));
        }
        if self.bias.shape() != [cout] {
            return Err(Error::shape("conv2d", "bias length", cout, self.bias.len()));
        }
        if self.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        Ok(())
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    /// Output extent along one spatial axis, or `None` when the kernel does
    /// not fit in the padded input.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        conv_output_extent(input, self.kernel_size(), self.stride, self.padding)
    }
}

pub fn conv_output_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

impl<T: Scalar> Parameterized<T> for ConvParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "kernel"), &self.kernel, ParamKind::Learnable);
        f(&join_path(prefix, "bias"), &self.bias, ParamKind::Learnable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "kernel"), &mut self.kernel, ParamKind::Learnable);
        f(&join_path(prefix, "bias"), &mut self.bias, ParamKind::Learnable);
    }
}

/// Inference-mode batch normalization followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
}

impl<T: Scalar> BnParams<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(BnParams {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            epsilon: T::from_f64_lossy(Self::DEFAULT_EPSILON),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape("bn_relu", name, c, t.len()));
            }
            t.ensure_finite(&format!("bn_relu {name}"))?;
        }
        if self.running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("bn_relu", "running_var has negative entries"));
        }
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid("bn_relu", "epsilon must be positive and finite"));
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for BnParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "gamma"), &self.gamma, ParamKind::Learnable);
        f(&join_path(prefix, "beta"), &self.beta, ParamKind::Learnable);
        f(
            &join_path(prefix, "running_mean"),
            &self.running_mean,
            ParamKind::Buffer,
        );
        f(&join_path(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "gamma"), &mut self.gamma, ParamKind::Learnable);
        f(&join_path(prefix, "beta"), &mut self.beta, ParamKind::Learnable);
        f(
            &join_path(prefix, "running_mean"),
            &mut self.running_mean,
            ParamKind::Buffer,
        );
        f(
            &join_path(prefix, "running_var"),
            &mut self.running_var,
            ParamKind::Buffer,
        );
    }
}

/// Fully connected layer `activation(W^T x + b)` with `W: n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        let p = DenseParams {
            weight,
            bias,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init(rng: &mut impl Rng, n: usize, m: usize, activation: Activation) -> Result<Self> {
        let bound = (6.0 / (n + m) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Tensor::from_fn(&[n, m], |_| T::from_f64_lossy(dist.sample(rng)))?;
        Self::new(weight, Tensor::zeros(&[m])?, activation)
    }

    pub fn zeroed(n: usize, m: usize, activation: Activation) -> Result<Self> {
        Self::new(Tensor::zeros(&[n, m])?, Tensor::zeros(&[m])?, activation)
    }

    pub fn validate(&self) -> Result<()> {
        let [_, m] = self.weight.shape()[..] else {
            return Err(Error::shape("dense", "weight rank", 2, self.weight.rank()));
        };
        if self.bias.shape() != [m] {
            return Err(Error::shape("dense", "bias length", m, self.bias.len()));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T: Scalar> Parameterized<T> for DenseParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "weight"), &self.weight, ParamKind::Learnable);
        f(&join_path(prefix, "bias"), &self.bias, ParamKind::Learnable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join_path(prefix, "weight"), &mut self.weight, ParamKind::Learnable);
        f(&join_path(prefix, "bias"), &mut self.bias, ParamKind::Learnable);
    }
}
