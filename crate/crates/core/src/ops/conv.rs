use crate::error::{Error, Result};
use crate::params::conv_output_extent;
use crate::tensor::{Scalar, Tensor};

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    const OP: &str = "conv2d";
    let (h, w, cin) = x.dims3(OP)?;
    let [k, kw, kcin, cout] = kernel.shape()[..] else {
        return Err(Error::shape(OP, "kernel rank", 4, kernel.rank()));
    };
    if kw != k {
        return Err(Error::shape(OP, "kernel width", k, kw));
    }
    if kcin != cin {
        return Err(Error::shape(OP, "input channels", kcin, cin));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(OP, "bias length", cout, bias.len()));
    }
    if stride == 0 {
        return Err(Error::invalid(OP, "stride must be positive"));
    }
    let oh = conv_output_extent(h, k, stride, padding)
        .ok_or_else(|| Error::invalid(OP, format!("kernel {k} exceeds padded height {}", h + 2 * padding)))?;
    let ow = conv_output_extent(w, k, stride, padding)
        .ok_or_else(|| Error::invalid(OP, format!("kernel {k} exceeds padded width {}", w + 2 * padding)))?;
    Ok(Geometry {
        h,
        w,
        cin,
        k,
        cout,
        oh,
        ow,
    })
}

/// Input coordinate hit by kernel tap `t` at output coordinate `o`.
#[inline]
fn tap(o: usize, t: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
    (o * stride + t).checked_sub(padding).filter(|&i| i < extent)
}

#[inline]
fn axpy<T: Scalar>(acc: &mut [T], a: T, x: &[T]) {
    for (dst, &v) in acc.iter_mut().zip(x) {
        *dst = *dst + a * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(super) fn forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry(x, kernel, bias, stride, padding)?;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            acc.copy_from_slice(bias.data());
            for ky in 0..g.k {
                let Some(iy) = tap(oy, ky, stride, padding, g.h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = tap(ox, kx, stride, padding, g.w) else {
                        continue;
                    };
                    let xrow = &xd[(iy * g.w + ix) * g.cin..][..g.cin];
                    let kbase = (ky * g.k + kx) * g.cin * g.cout;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        axpy(acc, xv, &kd[kbase + ci * g.cout..][..g.cout]);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.oh, g.ow, g.cout], out))
}

/// Returns cotangents for `(x, kernel, bias)`.
pub(super) fn vjp<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let cout = kernel.shape().get(3).copied().unwrap_or(0);
    let zero_bias = Tensor::zeros(&[cout.max(1)])?;
    let g = geometry(x, kernel, &zero_bias, stride, padding)?;
    if upstream.shape() != [g.oh, g.ow, g.cout] {
        return Err(Error::shape(
            "conv2d",
            "upstream cotangent length",
            g.oh * g.ow * g.cout,
            upstream.len(),
        ));
    }
    let (xd, kd, gd) = (x.data(), kernel.data(), upstream.data());

    let mut dx = vec![T::zero(); xd.len()];
    let mut dk = vec![T::zero(); kd.len()];
    let mut db = vec![T::zero(); g.cout];

    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let grow = &gd[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (d, &v) in db.iter_mut().zip(grow) {
                *d = *d + v;
            }
            for ky in 0..g.k {
                let Some(iy) = tap(oy, ky, stride, padding, g.h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = tap(ox, kx, stride, padding, g.w) else {
                        continue;
                    };
                    let xoff = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.k + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let krow = kbase + ci * g.cout;
                        dx[xoff + ci] = dx[xoff + ci] + dot(grow, &kd[krow..][..g.cout]);
                        axpy(&mut dk[krow..krow + g.cout], xd[xoff + ci], grow);
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(kernel.shape().to_vec(), dk),
        Tensor::from_parts(vec![g.cout], db),
    ))
}
