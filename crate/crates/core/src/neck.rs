//! Cross-scale neck: pooled aggregation and spatial attention on the coarse
//! map, split-bottleneck-merge blocks, and the two fusion outputs F40 / F20.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Op;
use crate::params::{join_path, BnParams, ConvParams, ParamKind, Parameterized};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SpffParams<T: Scalar = f32> {
    pub pre: ConvParams<T>,
    pub post: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct C2psaParams<T: Scalar = f32> {
    pub spatial_conv: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckParams<T: Scalar = f32> {
    pub conv: ConvParams<T>,
    pub bn: BnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3k2Params<T: Scalar = f32> {
    pub split: ConvParams<T>,
    pub bottlenecks: [BottleneckParams<T>; 2],
    pub merge: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckParams<T: Scalar = f32> {
    pub spff: SpffParams<T>,
    pub c2psa: C2psaParams<T>,
    pub c3k2_40: C3k2Params<T>,
    pub c3k2_20: C3k2Params<T>,
    pub reduce: ConvParams<T>,
    pub down4: ConvParams<T>,
}

pub const POOL_KERNEL: usize = 5;
pub const ATTENTION_KERNEL: usize = 7;

type ConvCtor<'a, T> = dyn FnMut(usize, usize, usize, usize, usize) -> Result<ConvParams<T>> + 'a;

impl<T: Scalar> C3k2Params<T> {
    fn build(cin: usize, cout: usize, conv: &mut ConvCtor<'_, T>) -> Result<Self> {
        if !cout.is_multiple_of(2) {
            return Err(Error::invalid("c3k2", format!("output channels {cout} must be even")));
        }
        let half = cout / 2;
        let mut bottleneck = || -> Result<BottleneckParams<T>> {
            Ok(BottleneckParams {
                conv: conv(3, half, half, 1, 1)?,
                bn: BnParams::identity(half)?,
            })
        };
        let bottlenecks = [bottleneck()?, bottleneck()?];
        Ok(C3k2Params {
            split: conv(1, cin, cout, 1, 0)?,
            bottlenecks,
            merge: conv(1, 3 * half, cout, 1, 0)?,
        })
    }

    pub fn init(rng: &mut impl Rng, cin: usize, cout: usize) -> Result<Self> {
        Self::build(cin, cout, &mut |k, ci, co, s, p| ConvParams::init(rng, k, ci, co, s, p))
    }

    pub fn zeroed(cin: usize, cout: usize) -> Result<Self> {
        Self::build(cin, cout, &mut ConvParams::zeroed)
    }

    pub fn out_channels(&self) -> usize {
        self.merge.out_channels()
    }
}

impl<T: Scalar> NeckParams<T> {
    fn build(c4: usize, c5: usize, conv: &mut ConvCtor<'_, T>) -> Result<Self> {
        if !c5.is_multiple_of(2) {
            return Err(Error::invalid("neck", format!("F5 channels {c5} must be even")));
        }
        Ok(NeckParams {
            spff: SpffParams {
                pre: conv(1, c5, c5 / 2, 1, 0)?,
                post: conv(1, 2 * c5, c5, 1, 0)?,
            },
            c2psa: C2psaParams {
                spatial_conv: conv(ATTENTION_KERNEL, 2, 1, 1, ATTENTION_KERNEL / 2)?,
            },
            c3k2_40: C3k2Params::build(2 * c4, c4, conv)?,
            c3k2_20: C3k2Params::build(c5 + c4, c5, conv)?,
            reduce: conv(1, c5, c4, 1, 0)?,
            down4: conv(3, c4, c4, 2, 1)?,
        })
    }

    pub fn init(rng: &mut impl Rng, c4: usize, c5: usize) -> Result<Self> {
        Self::build(c4, c5, &mut |k, ci, co, s, p| ConvParams::init(rng, k, ci, co, s, p))
    }

    pub fn zeroed(c4: usize, c5: usize) -> Result<Self> {
        Self::build(c4, c5, &mut ConvParams::zeroed)
    }
}

impl<T: Scalar> Parameterized<T> for C3k2Params<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.split.visit(&join_path(prefix, "split"), f);
        for (i, b) in self.bottlenecks.iter().enumerate() {
            let p = join_path(prefix, &format!("bottleneck{i}"));
            b.conv.visit(&join_path(&p, "conv"), f);
            b.bn.visit(&join_path(&p, "bn"), f);
        }
        self.merge.visit(&join_path(prefix, "merge"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.split.visit_mut(&join_path(prefix, "split"), f);
        for (i, b) in self.bottlenecks.iter_mut().enumerate() {
            let p = join_path(prefix, &format!("bottleneck{i}"));
            b.conv.visit_mut(&join_path(&p, "conv"), f);
            b.bn.visit_mut(&join_path(&p, "bn"), f);
        }
        self.merge.visit_mut(&join_path(prefix, "merge"), f);
    }
}

impl<T: Scalar> Parameterized<T> for NeckParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.spff.pre.visit(&join_path(prefix, "spff.pre"), f);
        self.spff.post.visit(&join_path(prefix, "spff.post"), f);
        self.c2psa
            .spatial_conv
            .visit(&join_path(prefix, "c2psa.spatial_conv"), f);
        self.c3k2_40.visit(&join_path(prefix, "c3k2_40"), f);
        self.c3k2_20.visit(&join_path(prefix, "c3k2_20"), f);
        self.reduce.visit(&join_path(prefix, "reduce"), f);
        self.down4.visit(&join_path(prefix, "down4"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.spff.pre.visit_mut(&join_path(prefix, "spff.pre"), f);
        self.spff.post.visit_mut(&join_path(prefix, "spff.post"), f);
        self.c2psa
            .spatial_conv
            .visit_mut(&join_path(prefix, "c2psa.spatial_conv"), f);
        self.c3k2_40.visit_mut(&join_path(prefix, "c3k2_40"), f);
        self.c3k2_20.visit_mut(&join_path(prefix, "c3k2_20"), f);
        self.reduce.visit_mut(&join_path(prefix, "reduce"), f);
        self.down4.visit_mut(&join_path(prefix, "down4"), f);
    }
}

fn pool<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.apply(
        Op::MaxPool {
            kernel: POOL_KERNEL,
            stride: 1,
            padding: POOL_KERNEL / 2,
        },
        &[x],
    )
}

pub fn spff_graph<T: Scalar>(g: &mut Graph<T>, f5: Var, p: &SpffParams<T>, prefix: &str) -> Result<Var> {
    let x = g.conv(f5, &p.pre, &join_path(prefix, "pre"))?;
    let m1 = pool(g, x)?;
    let m2 = pool(g, m1)?;
    let m3 = pool(g, m2)?;
    let cat = g.apply(Op::Concat, &[x, m1, m2, m3])?;
    g.conv(cat, &p.post, &join_path(prefix, "post"))
}

/// Returns `(attention, gated)`.
pub fn c2psa_graph<T: Scalar>(g: &mut Graph<T>, f: Var, p: &C2psaParams<T>, prefix: &str) -> Result<(Var, Var)> {
    let mean = g.apply(Op::ChannelMean, &[f])?;
    let max = g.apply(Op::ChannelMax, &[f])?;
    let cat = g.apply(Op::Concat, &[mean, max])?;
    let z = g.conv(cat, &p.spatial_conv, &join_path(prefix, "spatial_conv"))?;
    let attention = g.apply(Op::Sigmoid, &[z])?;
    let gated = g.apply(Op::SpatialGate, &[f, attention])?;
    Ok((attention, gated))
}

pub fn c3k2_graph<T: Scalar>(g: &mut Graph<T>, f: Var, p: &C3k2Params<T>, prefix: &str) -> Result<Var> {
    let y = g.conv(f, &p.split, &join_path(prefix, "split"))?;
    let ch = g.value(y).shape()[2];
    if !ch.is_multiple_of(2) {
        return Err(Error::invalid("c3k2", format!("split width {ch} must be even")));
    }
    let a = g.apply(Op::SliceChannels { start: 0, len: ch / 2 }, &[y])?;
    let b = g.apply(
        Op::SliceChannels {
            start: ch / 2,
            len: ch / 2,
        },
        &[y],
    )?;
    let mut chain = b;
    for (i, bp) in p.bottlenecks.iter().enumerate() {
        let path = join_path(prefix, &format!("bottleneck{i}"));
        let z = g.conv(chain, &bp.conv, &join_path(&path, "conv"))?;
        let z = g.bn_relu(z, &bp.bn, &join_path(&path, "bn"))?;
        chain = g.apply(Op::Add, &[chain, z])?;
    }
    let cat = g.apply(Op::Concat, &[a, b, chain])?;
    g.conv(cat, &p.merge, &join_path(prefix, "merge"))
}

#[derive(Debug, Clone, Copy)]
pub struct NeckVars {
    pub f40: Var,
    pub f20: Var,
    pub spff: Var,
    pub attention: Var,
    pub c2psa: Var,
    pub reduced_up: Var,
    pub down4: Var,
}

pub fn neck_graph<T: Scalar>(
    g: &mut Graph<T>,
    f4_rgbd: Var,
    f5_rgbd: Var,
    p: &NeckParams<T>,
    prefix: &str,
) -> Result<NeckVars> {
    let (h4, w4, _) = g.value(f4_rgbd).dims3("fuse_neck")?;
    let (h5, w5, _) = g.value(f5_rgbd).dims3("fuse_neck")?;
    if h4 != 2 * h5 {
        return Err(Error::shape("fuse_neck", "F4 height (2x F5)", 2 * h5, h4));
    }
    if w4 != 2 * w5 {
        return Err(Error::shape("fuse_neck", "F4 width (2x F5)", 2 * w5, w4));
    }

    let up = g.apply(Op::Upsample2, &[f5_rgbd])?;
    let reduced_up = g.conv(up, &p.reduce, &join_path(prefix, "reduce"))?;
    let cat40 = g.apply(Op::Concat, &[reduced_up, f4_rgbd])?;
    let f40 = c3k2_graph(g, cat40, &p.c3k2_40, &join_path(prefix, "c3k2_40"))?;

    let spff = spff_graph(g, f5_rgbd, &p.spff, &join_path(prefix, "spff"))?;
    let (attention, c2psa) = c2psa_graph(g, spff, &p.c2psa, &join_path(prefix, "c2psa"))?;
    let down4 = g.conv(f4_rgbd, &p.down4, &join_path(prefix, "down4"))?;
    let cat20 = g.apply(Op::Concat, &[c2psa, down4])?;
    let f20 = c3k2_graph(g, cat20, &p.c3k2_20, &join_path(prefix, "c3k2_20"))?;

    Ok(NeckVars {
        f40,
        f20,
        spff,
        attention,
        c2psa,
        reduced_up,
        down4,
    })
}

#[derive(Debug, Clone)]
pub struct NeckOutputs<T: Scalar = f32> {
    pub f40: Tensor<T>,
    pub f20: Tensor<T>,
    pub spff: Tensor<T>,
    pub attention: Tensor<T>,
    pub c2psa: Tensor<T>,
    pub reduced_up: Tensor<T>,
    pub down4: Tensor<T>,
}

impl<T: Scalar> NeckOutputs<T> {
    pub(crate) fn collect(g: &Graph<T>, v: &NeckVars) -> Self {
        NeckOutputs {
            f40: g.value(v.f40).clone(),
            f20: g.value(v.f20).clone(),
            spff: g.value(v.spff).clone(),
            attention: g.value(v.attention).clone(),
            c2psa: g.value(v.c2psa).clone(),
            reduced_up: g.value(v.reduced_up).clone(),
            down4: g.value(v.down4).clone(),
        }
    }
}

pub fn spff<T: Scalar>(f5: &Tensor<T>, p: &SpffParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(f5.clone());
    let y = spff_graph(&mut g, x, p, "neck.spff")?;
    Ok(g.value(y).clone())
}

pub fn c2psa<T: Scalar>(f: &Tensor<T>, p: &C2psaParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(f.clone());
    let (_, y) = c2psa_graph(&mut g, x, p, "neck.c2psa")?;
    Ok(g.value(y).clone())
}

pub fn c3k2<T: Scalar>(f: &Tensor<T>, p: &C3k2Params<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(f.clone());
    let y = c3k2_graph(&mut g, x, p, "c3k2")?;
    Ok(g.value(y).clone())
}

pub fn fuse_neck<T: Scalar>(f4_rgbd: &Tensor<T>, f5_rgbd: &Tensor<T>, p: &NeckParams<T>) -> Result<NeckOutputs<T>> {
    let mut g = Graph::new();
    let a = g.input(f4_rgbd.clone());
    let b = g.input(f5_rgbd.clone());
    let v = neck_graph(&mut g, a, b, p, "neck")?;
    Ok(NeckOutputs::collect(&g, &v))
}
