use crate::error::{Error, Result};
use crate::params::conv_output_extent;
use crate::tensor::{Scalar, Tensor};

pub(super) fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("global_avg_pool")?;
    let mut acc = vec![T::zero(); c];
    for px in x.data().chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a = *a + v;
        }
    }
    let n = T::from_usize(h * w).unwrap();
    Ok(Tensor::from_parts(vec![c], acc.into_iter().map(|v| v / n).collect()))
}

pub(super) fn gap_vjp<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("global_avg_pool")?;
    let n = T::from_usize(h * w).unwrap();
    let per: Vec<T> = g.data().iter().map(|&v| v / n).collect();
    let data = (0..h * w).flat_map(|_| per.iter().copied()).collect();
    Ok(Tensor::from_parts(vec![h, w, c], data))
}

pub(super) fn upsample_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("upsample2_nearest")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(4 * x.len());
    for oy in 0..2 * h {
        for ox in 0..2 * w {
            out.extend_from_slice(&xd[((oy / 2) * w + ox / 2) * c..][..c]);
        }
    }
    Ok(Tensor::from_parts(vec![2 * h, 2 * w, c], out))
}

pub(super) fn upsample_vjp<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let gd = g.data();
    let mut dx = vec![T::zero(); x.len()];
    for oy in 0..2 * h {
        for ox in 0..2 * w {
            let dst = &mut dx[((oy / 2) * w + ox / 2) * c..][..c];
            for (d, &v) in dst.iter_mut().zip(&gd[(oy * 2 * w + ox) * c..][..c]) {
                *d = *d + v;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

struct PoolGeometry {
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
}

fn pool_geometry<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Result<PoolGeometry> {
    const OP: &str = "maxpool";
    let (h, w, c) = x.dims3(OP)?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid(OP, "kernel and stride must be positive"));
    }
    // Larger padding could produce windows made only of padding.
    if 2 * padding > k {
        return Err(Error::invalid(
            OP,
            format!("padding {padding} exceeds half the kernel {k}"),
        ));
    }
    let oh =
        conv_output_extent(h, k, stride, padding).ok_or_else(|| Error::invalid(OP, "window exceeds padded height"))?;
    let ow =
        conv_output_extent(w, k, stride, padding).ok_or_else(|| Error::invalid(OP, "window exceeds padded width"))?;
    Ok(PoolGeometry { h, w, c, oh, ow })
}

/// Valid input positions of one pooling window, in row-major order.
fn window(
    g: &PoolGeometry,
    oy: usize,
    ox: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> impl Iterator<Item = usize> + '_ {
    (0..k).flat_map(move |ky| {
        (0..k).filter_map(move |kx| {
            let iy = (oy * stride + ky).checked_sub(padding).filter(|&v| v < g.h)?;
            let ix = (ox * stride + kx).checked_sub(padding).filter(|&v| v < g.w)?;
            Some(iy * g.w + ix)
        })
    })
}

/// For each output element, the flat input index of the first maximum.
fn argmax_indices<T: Scalar>(x: &Tensor<T>, g: &PoolGeometry, k: usize, stride: usize, padding: usize) -> Vec<usize> {
    let xd = x.data();
    let mut idx = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let positions: Vec<usize> = window(g, oy, ox, k, stride, padding).collect();
            for ch in 0..g.c {
                let mut best = positions[0] * g.c + ch;
                for &p in &positions[1..] {
                    if xd[p * g.c + ch] > xd[best] {
                        best = p * g.c + ch;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(super) fn maxpool_forward<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = pool_geometry(x, k, stride, padding)?;
    let xd = x.data();
    let out = argmax_indices(x, &g, k, stride, padding)
        .into_iter()
        .map(|i| xd[i])
        .collect();
    Ok(Tensor::from_parts(vec![g.oh, g.ow, g.c], out))
}

pub(super) fn maxpool_vjp<T: Scalar>(
    x: &Tensor<T>,
    up: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let g = pool_geometry(x, k, stride, padding).expect("validated by forward");
    let mut dx = vec![T::zero(); x.len()];
    for (i, &gv) in argmax_indices(x, &g, k, stride, padding).into_iter().zip(up.data()) {
        dx[i] = dx[i] + gv;
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

/// Smallest positive gap between the maximum of `values` and the largest
/// strictly smaller value. Exact ties are ignored: they arise from the same
/// upstream element and move together under perturbation.
fn top_gap<T: Scalar>(values: impl Iterator<Item = T>) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for v in values.map(|v| v.to_f64_lossy()) {
        if v > best {
            second = best;
            best = v;
        } else if v < best && v > second {
            second = v;
        }
    }
    let gap = best - second;
    if gap.is_finite() {
        gap
    } else {
        f64::INFINITY
    }
}

pub(super) fn maxpool_min_gap<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> f64 {
    let Ok(g) = pool_geometry(x, k, stride, padding) else {
        return f64::INFINITY;
    };
    let xd = x.data();
    let mut min_gap = f64::INFINITY;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let positions: Vec<usize> = window(&g, oy, ox, k, stride, padding).collect();
            for ch in 0..g.c {
                min_gap = min_gap.min(top_gap(positions.iter().map(|&p| xd[p * g.c + ch])));
            }
        }
    }
    min_gap
}

pub(super) fn channel_mean_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("channel_mean")?;
    let n = T::from_usize(c).unwrap();
    let out = x
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().copied().sum::<T>() / n)
        .collect();
    Ok(Tensor::from_parts(vec![h, w, 1], out))
}

pub(super) fn channel_mean_vjp<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = x.shape()[2];
    let n = T::from_usize(c).unwrap();
    let dx = g.data().iter().flat_map(|&v| std::iter::repeat_n(v / n, c)).collect();
    Tensor::from_parts(x.shape().to_vec(), dx)
}

pub(super) fn channel_max_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("channel_max")?;
    let out = x
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    Ok(Tensor::from_parts(vec![h, w, 1], out))
}

pub(super) fn channel_max_vjp<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = x.shape()[2];
    let mut dx = vec![T::zero(); x.len()];
    for (p, (px, &gv)) in x.data().chunks_exact(c).zip(g.data()).enumerate() {
        let best = super::dense::argmax(px);
        dx[p * c + best] = gv;
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

pub(super) fn channel_max_min_gap<T: Scalar>(x: &Tensor<T>) -> f64 {
    let c = x.shape().last().copied().unwrap_or(1);
    x.data()
        .chunks_exact(c)
        .map(|px| top_gap(px.iter().copied()))
        .fold(f64::INFINITY, f64::min)
}
