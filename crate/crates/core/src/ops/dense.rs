use crate::error::{Error, Result};
use crate::params::Activation;
use crate::tensor::{Scalar, Tensor};

use super::sigmoid_scalar;

fn preactivation<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<T>> {
    const OP: &str = "dense";
    if x.rank() != 1 {
        return Err(Error::shape(OP, "input rank", 1, x.rank()));
    }
    let [n, m] = w.shape()[..] else {
        return Err(Error::shape(OP, "weight rank", 2, w.rank()));
    };
    if x.len() != n {
        return Err(Error::shape(OP, "input length (weight rows)", n, x.len()));
    }
    if b.shape() != [m] {
        return Err(Error::shape(OP, "bias length (weight cols)", m, b.len()));
    }
    let mut z = b.to_vec();
    for (&xv, row) in x.data().iter().zip(w.data().chunks_exact(m)) {
        for (acc, &wv) in z.iter_mut().zip(row) {
            *acc = *acc + xv * wv;
        }
    }
    Ok(z)
}

pub(super) fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, act: Activation) -> Result<Tensor<T>> {
    let z = preactivation(x, w, b)?;
    let m = z.len();
    let y = z
        .into_iter()
        .map(|v| match act {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid_scalar(v),
            Activation::None => v,
        })
        .collect();
    Ok(Tensor::from_parts(vec![m], y))
}

pub(super) fn vjp<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    y: &Tensor<T>,
    g: &Tensor<T>,
    act: Activation,
) -> Vec<Tensor<T>> {
    let m = y.len();
    let dz: Vec<T> = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&yv, &gv)| match act {
            Activation::Relu if yv <= T::zero() => T::zero(),
            Activation::Sigmoid => gv * yv * (T::one() - yv),
            _ => gv,
        })
        .collect();
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = Vec::with_capacity(w.len());
    for (&xv, row) in x.data().iter().zip(w.data().chunks_exact(m)) {
        dx.push(row.iter().zip(&dz).fold(T::zero(), |s, (&wv, &d)| s + wv * d));
        dw.extend(dz.iter().map(|&d| xv * d));
    }
    vec![
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![m], dz),
    ]
}

pub(super) fn min_abs_preactivation<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Option<f64> {
    let z = preactivation(x, w, b).ok()?;
    Some(z.iter().map(|v| v.abs().to_f64_lossy()).fold(f64::INFINITY, f64::min))
}

fn check_vector<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<()> {
    if x.rank() != 1 {
        return Err(Error::shape(op, "rank", 1, x.rank()));
    }
    Ok(())
}

fn max_of<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().fold(T::neg_infinity(), T::max)
}

pub(super) fn softmax_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    check_vector("softmax", x)?;
    let m = max_of(x.data());
    let e: Vec<T> = x.data().iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        e.into_iter().map(|v| v / s).collect(),
    ))
}

pub(super) fn softmax_vjp<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let inner = y.dot(g);
    Tensor::from_parts(
        y.shape().to_vec(),
        y.data()
            .iter()
            .zip(g.data())
            .map(|(&yv, &gv)| yv * (gv - inner))
            .collect(),
    )
}

fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let m = max_of(x);
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub(super) fn cross_entropy_forward<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    check_vector("cross_entropy", logits)?;
    if label >= logits.len() {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {label} out of range for {} classes", logits.len()),
        ));
    }
    Ok(Tensor::scalar(log_sum_exp(logits.data()) - logits.data()[label]))
}

pub(super) fn cross_entropy_vjp<T: Scalar>(logits: &Tensor<T>, g: &Tensor<T>, label: usize) -> Tensor<T> {
    let scale = g.data()[0];
    let lse = log_sum_exp(logits.data());
    Tensor::from_parts(
        logits.shape().to_vec(),
        logits
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = (v - lse).exp();
                let target = if i == label { T::one() } else { T::zero() };
                scale * (p - target)
            })
            .collect(),
    )
}

pub(super) fn argmax_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    check_vector("argmax", x)?;
    Ok(Tensor::scalar(T::from_usize(argmax(x.data())).unwrap()))
}

/// First index of the maximum.
pub(crate) fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
