//! A recording tape over [`Op`]s.
//!
//! Model code builds its forward pass on a [`Graph`]; every intermediate stays
//! addressable through its [`Var`], and [`Graph::backward`] walks the tape in
//! reverse, chaining [`vjp`] calls. Parameters enter as named leaves so their
//! gradients can be collected by path.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::{self, Op};
use crate::params::{BnParams, ConvParams, DenseParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<Op<T>>,
    inputs: Vec<Var>,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf registered under `path`, whose gradient [`Gradients::by_path`]
    /// reports.
    pub fn param(&mut self, path: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.input(value);
        self.params.push((path.into(), v));
        v
    }

    pub fn apply(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            ops::forward(&op, &refs)?
        };
        self.nodes.push(Node {
            value,
            op: Some(op),
            inputs: inputs.to_vec(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the
    /// output).
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                "seed length",
                self.value(output).len(),
                seed.len(),
            ));
        }
        let mut cot: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        cot[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let (Some(op), Some(g)) = (&node.op, &cot[i]) else {
                continue;
            };
            let refs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let grads = ops::vjp(op, &refs, &node.value, g)?;
            for (input, grad) in node.inputs.iter().zip(grads) {
                let slot = &mut cot[input.0];
                *slot = Some(match slot.take() {
                    None => grad,
                    Some(acc) => ops::forward(&Op::Add, &[&acc, &grad])?,
                });
            }
        }
        Ok(Gradients {
            cot,
            params: self.params.clone(),
        })
    }

    /// Backward pass from a single-element output with seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients<T>> {
        let value = self.value(output);
        if value.len() != 1 {
            return Err(Error::shape("backward_scalar", "output length", 1, value.len()));
        }
        self.backward(output, Tensor::from_parts(value.shape().to_vec(), vec![T::one()]))
    }

    /// Smallest distance from any recorded op's evaluation point to one of its
    /// kinks (ReLU zero crossings, max ties). Infinite for smooth graphs.
    pub fn kink_distance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| {
                let op = n.op.as_ref()?;
                let refs: Vec<&Tensor<T>> = n.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                ops::kink_distance(op, &refs)
            })
            .fold(f64::INFINITY, f64::min)
    }

    // Layer helpers: bind a parameter struct under `path` and apply it.

    pub fn conv(&mut self, x: Var, p: &ConvParams<T>, path: &str) -> Result<Var> {
        let k = self.param(format!("{path}.kernel"), p.kernel.clone());
        let b = self.param(format!("{path}.bias"), p.bias.clone());
        self.apply(
            Op::Conv2d {
                stride: p.stride,
                padding: p.padding,
            },
            &[x, k, b],
        )
    }

    pub fn bn_relu(&mut self, x: Var, p: &BnParams<T>, path: &str) -> Result<Var> {
        p.validate()?;
        let g = self.param(format!("{path}.gamma"), p.gamma.clone());
        let b = self.param(format!("{path}.beta"), p.beta.clone());
        self.apply(ops::bn_op(p), &[x, g, b])
    }

    pub fn dense(&mut self, x: Var, p: &DenseParams<T>, path: &str) -> Result<Var> {
        let w = self.param(format!("{path}.weight"), p.weight.clone());
        let b = self.param(format!("{path}.bias"), p.bias.clone());
        self.apply(
            Op::Dense {
                activation: p.activation,
            },
            &[x, w, b],
        )
    }
}

pub struct Gradients<T: Scalar = f32> {
    cot: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when no path connects it to the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.cot.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when it does not reach the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()).expect("shape of a live tensor"))
    }

    /// Parameter gradients keyed by path. Parameters bound more than once
    /// have their gradients summed.
    pub fn by_path(&self) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (path, v) in &self.params {
            let Some(g) = self.get(*v) else { continue };
            match out.get_mut(path) {
                Some(acc) => *acc = ops::ewise_add(acc, g)?,
                None => {
                    out.insert(path.clone(), g.clone());
                }
            }
        }
        Ok(out)
    }
}
