//! Reference implementations written as plain index loops over `f64`.
//!
//! These share no code with the production kernels. Each takes tensors in the
//! same layouts and returns flat `f64` buffers.

use crate::tensor::{Scalar, Tensor};

fn f64s<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

/// Six-nested-loop cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let (xd, kd, bd) = (f64s(x), f64s(kernel), f64s(bias));
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut sum = bd[co];
                for ky in 0..k {
                    for kx in 0..k {
                        for ci in 0..cin {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xv = xd[(iy as usize * w + ix as usize) * cin + ci];
                            let kv = kd[((ky * k + kx) * cin + ci) * cout + co];
                            sum += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = sum;
            }
        }
    }
    out
}

pub fn bn_relu<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: f64,
) -> Vec<f64> {
    let c = gamma.len();
    let (g, b, m, v) = (f64s(gamma), f64s(beta), f64s(mean), f64s(var));
    f64s(x)
        .iter()
        .enumerate()
        .map(|(i, &xv)| {
            let ch = i % c;
            let y = g[ch] * (xv - m[ch]) / (v[ch] + eps).sqrt() + b[ch];
            if y > 0.0 {
                y
            } else {
                0.0
            }
        })
        .collect()
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = f64s(x);
    (0..c)
        .map(|ch| {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += xd[(y * w + xx) * c + ch];
                }
            }
            s / (h * w) as f64
        })
        .collect()
}

pub fn dense<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: crate::params::Activation,
) -> Vec<f64> {
    let (n, m) = (weight.shape()[0], weight.shape()[1]);
    let (xd, wd, bd) = (f64s(x), f64s(weight), f64s(bias));
    (0..m)
        .map(|j| {
            let mut z = bd[j];
            for i in 0..n {
                z += wd[i * m + j] * xd[i];
            }
            match activation {
                crate::params::Activation::Relu => z.max(0.0),
                crate::params::Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                crate::params::Activation::None => z,
            }
        })
        .collect()
}

pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = f64s(x);
    let mut out = vec![0.0; 4 * h * w * c];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                for dy in 0..2 {
                    for dx in 0..2 {
                        out[((2 * y + dy) * 2 * w + 2 * xx + dx) * c + ch] = xd[(y * w + xx) * c + ch];
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = f64s(x);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let o = &mut out[(oy * ow + ox) * c + ch];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            *o = o.max(xd[(iy as usize * w + ix as usize) * c + ch]);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<f64> {
    let (h, w, ca) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let cb = b.shape()[2];
    let (ad, bd) = (f64s(a), f64s(b));
    let mut out = Vec::new();
    for p in 0..h * w {
        for ch in 0..ca {
            out.push(ad[p * ca + ch]);
        }
        for ch in 0..cb {
            out.push(bd[p * cb + ch]);
        }
    }
    out
}

/// Element-wise combination with the channel-vector broadcast rule.
pub fn ewise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let (ad, bd) = (f64s(a), f64s(b));
    (0..ad.len())
        .map(|i| {
            let j = if a.shape() == b.shape() { i } else { i % bd.len() };
            f(ad[i], bd[j])
        })
        .collect()
}

pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let c = x.shape()[2];
    f64s(x).chunks(c).map(|px| px.iter().sum::<f64>() / c as f64).collect()
}

pub fn channel_max<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let c = x.shape()[2];
    f64s(x)
        .chunks(c)
        .map(|px| px.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn spatial_gate<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>) -> Vec<f64> {
    let c = a.shape()[2];
    let (ad, sd) = (f64s(a), f64s(s));
    (0..ad.len()).map(|i| ad[i] * sd[i / c]).collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let xd = f64s(x);
    let m = xd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xd.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn max_abs_err<T: Scalar>(actual: &Tensor<T>, expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len(), "oracle length mismatch");
    actual
        .data()
        .iter()
        .zip(expected)
        .map(|(a, e)| (a.to_f64_lossy() - e).abs())
        .fold(0.0, f64::max)
}
