//! Central finite-difference gradient checks in `f64`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ops::{self, Op};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;

/// Norm floor below which gradients are compared absolutely.
const NORM_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)` over whole gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

fn perturbed(inputs: &[Tensor<f64>], which: usize, index: usize, delta: f64) -> Vec<Tensor<f64>> {
    let mut out = inputs.to_vec();
    let mut data = out[which].to_vec();
    data[index] += delta;
    out[which] = Tensor::new(out[which].shape(), data).expect("same shape");
    out
}

/// Compares `grads` against a coordinate-wise central difference of the
/// scalar function `eval`, perturbing every element of every input.
pub fn coordinate_check(
    inputs: &[Tensor<f64>],
    grads: &[Tensor<f64>],
    eval: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    step: f64,
) -> Result<f64> {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (which, (x, g)) in inputs.iter().zip(grads).enumerate() {
        for i in 0..x.len() {
            let plus = eval(&perturbed(inputs, which, i, step))?;
            let minus = eval(&perturbed(inputs, which, i, -step))?;
            numeric.push((plus - minus) / (2.0 * step));
            analytic.push(g.data()[i]);
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Compares directional derivatives along `directions` random Gaussian
/// directions spanning all inputs jointly; returns the worst relative error.
pub fn directional_check(
    inputs: &[Tensor<f64>],
    grads: &[Tensor<f64>],
    eval: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    directions: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dirs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| (0..x.len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let shift = |sign: f64| -> Vec<Tensor<f64>> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(x, d)| {
                    let data = x.data().iter().zip(d).map(|(v, dv)| v + sign * step * dv).collect();
                    Tensor::new(x.shape(), data).expect("same shape")
                })
                .collect()
        };
        let numeric = (eval(&shift(1.0))? - eval(&shift(-1.0))?) / (2.0 * step);
        let analytic: f64 = grads
            .iter()
            .zip(&dirs)
            .map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        worst = worst.max(relative_error(&[analytic], &[numeric]));
    }
    Ok(worst)
}

/// Checks `vjp(op)` at `inputs` against finite differences of
/// `<upstream, op(inputs)>`.
pub fn check_op(op: &Op<f64>, inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<f64> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = ops::forward(op, &refs)?;
    let grads = ops::vjp(op, &refs, &out, upstream)?;
    coordinate_check(
        inputs,
        &grads,
        |xs| {
            let refs: Vec<&Tensor<f64>> = xs.iter().collect();
            Ok(ops::forward(op, &refs)?.dot(upstream))
        },
        FD_STEP,
    )
}
