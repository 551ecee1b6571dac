use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `a + sign * b` for equal shapes.
pub(super) fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, sign: T) -> Result<Tensor<T>> {
    same_shape(if sign > T::zero() { "ewise_add" } else { "ewise_sub" }, a, b)?;
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + sign * y).collect(),
    ))
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::shape(op, "rank", a.rank(), b.rank()));
    }
    for (axis, (&ea, &eb)) in a.shape().iter().zip(b.shape()).enumerate() {
        if ea != eb {
            return Err(Error::shape(op, format!("axis {axis}"), ea, eb));
        }
    }
    Ok(())
}

/// True when `b` is a channel vector broadcast over a rank-3 `a`.
fn is_channel_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.rank() == 3 && b.rank() == 1 && b.len() == a.shape()[2] && a.shape() != b.shape()
}

pub(super) fn mul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if is_channel_broadcast(a, b) {
        let c = b.len();
        let data = a
            .data()
            .chunks_exact(c)
            .flat_map(|px| px.iter().zip(b.data()).map(|(&x, &s)| x * s))
            .collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    same_shape("ewise_mul", a, b)?;
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect(),
    ))
}

pub(super) fn mul_vjp<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
    if is_channel_broadcast(a, b) {
        let c = b.len();
        let mut db = vec![T::zero(); c];
        let mut da = Vec::with_capacity(a.len());
        for (px, gp) in a.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
            for ch in 0..c {
                da.push(gp[ch] * b.data()[ch]);
                db[ch] = db[ch] + gp[ch] * px[ch];
            }
        }
        return vec![
            Tensor::from_parts(a.shape().to_vec(), da),
            Tensor::from_parts(vec![c], db),
        ];
    }
    let da = g.data().iter().zip(b.data()).map(|(&gv, &y)| gv * y).collect();
    let db = g.data().iter().zip(a.data()).map(|(&gv, &x)| gv * x).collect();
    vec![
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    ]
}

pub(super) fn gate_forward<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "spatial_gate";
    let (h, w, c) = a.dims3(OP)?;
    let (sh, sw, sc) = s.dims3(OP)?;
    if sc != 1 {
        return Err(Error::shape(OP, "gate channels", 1, sc));
    }
    if sh != h {
        return Err(Error::shape(OP, "height", h, sh));
    }
    if sw != w {
        return Err(Error::shape(OP, "width", w, sw));
    }
    let data = a
        .data()
        .chunks_exact(c)
        .zip(s.data())
        .flat_map(|(px, &sv)| px.iter().map(move |&x| x * sv))
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub(super) fn gate_vjp<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
    let c = a.shape()[2];
    let mut da = Vec::with_capacity(a.len());
    let mut ds = Vec::with_capacity(s.len());
    for ((px, gp), &sv) in a.data().chunks_exact(c).zip(g.data().chunks_exact(c)).zip(s.data()) {
        da.extend(gp.iter().map(|&gv| gv * sv));
        ds.push(px.iter().zip(gp).fold(T::zero(), |acc, (&x, &gv)| acc + x * gv));
    }
    vec![
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(s.shape().to_vec(), ds),
    ]
}

pub(super) fn concat_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    const OP: &str = "concat_channels";
    if inputs[0].rank() == 1 {
        let mut out = Vec::new();
        for t in inputs {
            if t.rank() != 1 {
                return Err(Error::shape(OP, "rank", 1, t.rank()));
            }
            out.extend_from_slice(t.data());
        }
        return Ok(Tensor::from_parts(vec![out.len()], out));
    }
    let (h, w, _) = inputs[0].dims3(OP)?;
    let mut widths = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (th, tw, tc) = t.dims3(OP)?;
        if th != h {
            return Err(Error::shape(OP, "height", h, th));
        }
        if tw != w {
            return Err(Error::shape(OP, "width", w, tw));
        }
        widths.push(tc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for (t, &c) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[p * c..][..c]);
        }
    }
    Ok(Tensor::from_parts(vec![h, w, total], out))
}

pub(super) fn concat_vjp<T: Scalar>(inputs: &[&Tensor<T>], g: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut start = 0;
    inputs
        .iter()
        .map(|t| {
            let c = *t.shape().last().unwrap();
            let piece = if t.rank() == 1 {
                Tensor::from_parts(vec![c], g.data()[start..start + c].to_vec())
            } else {
                slice_raw(g, start, c)
            };
            start += c;
            piece
        })
        .collect()
}

fn slice_raw<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x
        .data()
        .chunks_exact(c)
        .flat_map(|px| px[start..start + len].iter().copied())
        .collect();
    Tensor::from_parts(vec![h, w, len], data)
}

pub(super) fn slice_forward<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (_, _, c) = x.dims3("slice_channels")?;
    if len == 0 || start + len > c {
        return Err(Error::invalid(
            "slice_channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    Ok(slice_raw(x, start, len))
}

pub(super) fn slice_vjp<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>, start: usize) -> Tensor<T> {
    let c = x.shape()[2];
    let len = g.shape()[2];
    let mut dx = vec![T::zero(); x.len()];
    for (dst, src) in dx.chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
        dst[start..start + len].copy_from_slice(src);
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}
