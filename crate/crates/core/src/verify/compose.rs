//! Shape-tracking wrappers over the loop oracles, and whole-block oracles
//! composed from them. Everything here runs in `f64`.

use crate::mlge::{GlobalParams, LocalParams};
use crate::neck::{C2psaParams, C3k2Params, NeckParams, SpffParams, POOL_KERNEL};
use crate::params::{BnParams, ConvParams, DenseParams};
use crate::tensor::{Scalar, Tensor};

use super::oracle;

pub type T64 = Tensor<f64>;

fn t(shape: &[usize], data: Vec<f64>) -> T64 {
    Tensor::new(shape, data).expect("oracle shape")
}

pub fn conv<T: Scalar>(x: &T64, p: &ConvParams<T>) -> T64 {
    let (k, cout) = (p.kernel.shape()[0], p.kernel.shape()[3]);
    let oh = (x.shape()[0] + 2 * p.padding - k) / p.stride + 1;
    let ow = (x.shape()[1] + 2 * p.padding - k) / p.stride + 1;
    t(
        &[oh, ow, cout],
        oracle::conv2d(x, &p.kernel.cast(), &p.bias.cast(), p.stride, p.padding),
    )
}

pub fn bn_relu<T: Scalar>(x: &T64, p: &BnParams<T>) -> T64 {
    let data = oracle::bn_relu(
        x,
        &p.gamma.cast(),
        &p.beta.cast(),
        &p.running_mean.cast(),
        &p.running_var.cast(),
        p.epsilon.to_f64_lossy(),
    );
    t(x.shape(), data)
}

pub fn dense<T: Scalar>(x: &T64, p: &DenseParams<T>) -> T64 {
    let data = oracle::dense(x, &p.weight.cast(), &p.bias.cast(), p.activation);
    t(&[data.len()], data)
}

pub fn gap(x: &T64) -> T64 {
    let data = oracle::global_avg_pool(x);
    t(&[data.len()], data)
}

pub fn add(a: &T64, b: &T64) -> T64 {
    t(a.shape(), oracle::ewise(a, b, |x, y| x + y))
}

pub fn mul(a: &T64, b: &T64) -> T64 {
    t(a.shape(), oracle::ewise(a, b, |x, y| x * y))
}

pub fn up2(x: &T64) -> T64 {
    let s = x.shape();
    t(&[2 * s[0], 2 * s[1], s[2]], oracle::upsample2(x))
}

pub fn maxpool(x: &T64, k: usize, stride: usize, padding: usize) -> T64 {
    let s = x.shape();
    let oh = (s[0] + 2 * padding - k) / stride + 1;
    let ow = (s[1] + 2 * padding - k) / stride + 1;
    t(&[oh, ow, s[2]], oracle::maxpool(x, k, stride, padding))
}

pub fn concat(parts: &[&T64]) -> T64 {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        let s = acc.shape().to_vec();
        acc = t(&[s[0], s[1], s[2] + p.shape()[2]], oracle::concat(&acc, p));
    }
    acc
}

pub fn concat_vec(parts: &[&T64]) -> T64 {
    let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    t(&[data.len()], data)
}

pub fn slice(x: &T64, start: usize, len: usize) -> T64 {
    let s = x.shape();
    let mut out = Vec::with_capacity(s[0] * s[1] * len);
    for px in x.data().chunks(s[2]) {
        out.extend_from_slice(&px[start..start + len]);
    }
    t(&[s[0], s[1], len], out)
}

pub fn channel_mean(x: &T64) -> T64 {
    t(&[x.shape()[0], x.shape()[1], 1], oracle::channel_mean(x))
}

pub fn channel_max(x: &T64) -> T64 {
    t(&[x.shape()[0], x.shape()[1], 1], oracle::channel_max(x))
}

pub fn sigmoid(x: &T64) -> T64 {
    x.map(oracle::sigmoid)
}

pub fn spatial_gate(x: &T64, s: &T64) -> T64 {
    t(x.shape(), oracle::spatial_gate(x, s))
}

pub fn mlge_local<T: Scalar>(a: &T64, b: &T64, p: &LocalParams<T>) -> T64 {
    let sum = add(a, b);
    let x = bn_relu(&conv(&sum, &p.conv1), &p.bn1);
    let x = bn_relu(&conv(&x, &p.conv3), &p.bn2);
    mul(&x, &sum)
}

pub fn mlge_global<T: Scalar>(a: &T64, b: &T64, p: &GlobalParams<T>) -> T64 {
    let sum = add(a, b);
    let gate = dense(&dense(&gap(&sum), &p.dense1), &p.dense2);
    mul(&sum, &gate)
}

pub fn spff<T: Scalar>(f5: &T64, p: &SpffParams<T>) -> T64 {
    let x = conv(f5, &p.pre);
    let m1 = maxpool(&x, POOL_KERNEL, 1, POOL_KERNEL / 2);
    let m2 = maxpool(&m1, POOL_KERNEL, 1, POOL_KERNEL / 2);
    let m3 = maxpool(&m2, POOL_KERNEL, 1, POOL_KERNEL / 2);
    conv(&concat(&[&x, &m1, &m2, &m3]), &p.post)
}

pub fn c2psa<T: Scalar>(f: &T64, p: &C2psaParams<T>) -> T64 {
    let cat = concat(&[&channel_mean(f), &channel_max(f)]);
    let attention = sigmoid(&conv(&cat, &p.spatial_conv));
    spatial_gate(f, &attention)
}

pub fn c3k2<T: Scalar>(f: &T64, p: &C3k2Params<T>) -> T64 {
    let y = conv(f, &p.split);
    let half = y.shape()[2] / 2;
    let a = slice(&y, 0, half);
    let b = slice(&y, half, half);
    let mut chain = b.clone();
    for bp in &p.bottlenecks {
        chain = add(&chain, &bn_relu(&conv(&chain, &bp.conv), &bp.bn));
    }
    conv(&concat(&[&a, &b, &chain]), &p.merge)
}

pub fn fuse_neck<T: Scalar>(f4: &T64, f5: &T64, p: &NeckParams<T>) -> (T64, T64) {
    let f40 = c3k2(&concat(&[&conv(&up2(f5), &p.reduce), f4]), &p.c3k2_40);
    let f20 = c3k2(
        &concat(&[&c2psa(&spff(f5, &p.spff), &p.c2psa), &conv(f4, &p.down4)]),
        &p.c3k2_20,
    );
    (f40, f20)
}
