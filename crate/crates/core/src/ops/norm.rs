use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const OP: &str = "bn_relu";

/// Per-channel `(scale, shift)` such that the pre-activation is
/// `scale * x + shift`.
fn affine<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, mean: &Tensor<T>, var: &Tensor<T>, eps: T) -> Vec<(T, T, T)> {
    gamma
        .data()
        .iter()
        .zip(beta.data())
        .zip(mean.data().iter().zip(var.data()))
        .map(|((&g, &b), (&m, &v))| {
            let inv_std = T::one() / (v + eps).sqrt();
            (g * inv_std, b - g * inv_std * m, inv_std)
        })
        .collect()
}

pub(super) fn forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let c = *x.shape().last().unwrap();
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", mean),
        ("running_var", var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(OP, format!("{name} length (channel axis)"), c, t.len()));
        }
    }
    if !mean.is_finite() || !var.is_finite() || !eps.is_finite() {
        return Err(Error::NonFinite("bn_relu running statistics".into()));
    }
    if var.data().iter().any(|&v| v < T::zero()) || eps <= T::zero() {
        return Err(Error::invalid(OP, "variance must be non-negative and epsilon positive"));
    }
    let coeffs = affine(gamma, beta, mean, var, eps);
    let out = x
        .data()
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter()
                .zip(&coeffs)
                .map(|(&v, &(s, t, _))| (s * v + t).max(T::zero()))
        })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Cotangents for `(x, gamma, beta)`.
pub(super) fn vjp<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: T,
) -> Vec<Tensor<T>> {
    let c = gamma.len();
    let inv_std: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, ((&xv, &y), &g)) in x.data().iter().zip(output.data()).zip(upstream.data()).enumerate() {
        if y <= T::zero() {
            continue;
        }
        let ch = i % c;
        let xhat = (xv - mean.data()[ch]) * inv_std[ch];
        dx[i] = g * gamma.data()[ch] * inv_std[ch];
        dgamma[ch] = dgamma[ch] + g * xhat;
        dbeta[ch] = dbeta[ch] + g;
    }
    vec![
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ]
}

pub(super) fn min_abs_preactivation<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: T,
) -> f64 {
    let c = gamma.len();
    let coeffs = affine(gamma, beta, mean, var, eps);
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (s, t, _) = coeffs[i % c];
            (s * v + t).abs().to_f64_lossy()
        })
        .fold(f64::INFINITY, f64::min)
}
