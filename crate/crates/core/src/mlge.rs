//! Local and global gating of the two modality streams.
//!
//! The local path sums the F4 maps and multiplies the sum by a small conv
//! stack of itself; the global path sums the F5 maps and rescales each
//! channel by a squeeze-style gate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Op;
use crate::params::{join_path, Activation, BnParams, ConvParams, DenseParams, ParamKind, Parameterized};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalParams<T: Scalar = f32> {
    pub conv1: ConvParams<T>,
    pub bn1: BnParams<T>,
    pub conv3: ConvParams<T>,
    pub bn2: BnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams<T: Scalar = f32> {
    pub dense1: DenseParams<T>,
    pub dense2: DenseParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlgeParams<T: Scalar = f32> {
    pub local: LocalParams<T>,
    pub global: GlobalParams<T>,
    pub reduction: usize,
}

impl<T: Scalar> MlgeParams<T> {
    pub fn init(rng: &mut impl Rng, c4: usize, c5: usize, reduction: usize) -> Result<Self> {
        check_reduction(c5, reduction)?;
        Ok(MlgeParams {
            local: LocalParams {
                conv1: ConvParams::init(rng, 1, c4, c4, 1, 0)?,
                bn1: BnParams::identity(c4)?,
                conv3: ConvParams::init(rng, 3, c4, c4, 1, 1)?,
                bn2: BnParams::identity(c4)?,
            },
            global: GlobalParams {
                dense1: DenseParams::init(rng, c5, c5 / reduction, Activation::Relu)?,
                dense2: DenseParams::init(rng, c5 / reduction, c5, Activation::Sigmoid)?,
            },
            reduction,
        })
    }

    /// Every kernel, weight and bias zero; BN at identity.
    pub fn zeroed(c4: usize, c5: usize, reduction: usize) -> Result<Self> {
        check_reduction(c5, reduction)?;
        Ok(MlgeParams {
            local: LocalParams {
                conv1: ConvParams::zeroed(1, c4, c4, 1, 0)?,
                bn1: BnParams::identity(c4)?,
                conv3: ConvParams::zeroed(3, c4, c4, 1, 1)?,
                bn2: BnParams::identity(c4)?,
            },
            global: GlobalParams {
                dense1: DenseParams::zeroed(c5, c5 / reduction, Activation::Relu)?,
                dense2: DenseParams::zeroed(c5 / reduction, c5, Activation::Sigmoid)?,
            },
            reduction,
        })
    }
}

fn check_reduction(c5: usize, reduction: usize) -> Result<()> {
    if reduction == 0 || !c5.is_multiple_of(reduction) {
        return Err(Error::invalid(
            "mlge",
            format!("F5 channels {c5} not divisible by reduction {reduction}"),
        ));
    }
    Ok(())
}

impl<T: Scalar> Parameterized<T> for MlgeParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        let local = join_path(prefix, "local");
        self.local.conv1.visit(&join_path(&local, "conv1"), f);
        self.local.bn1.visit(&join_path(&local, "bn1"), f);
        self.local.conv3.visit(&join_path(&local, "conv3"), f);
        self.local.bn2.visit(&join_path(&local, "bn2"), f);
        let global = join_path(prefix, "global");
        self.global.dense1.visit(&join_path(&global, "dense1"), f);
        self.global.dense2.visit(&join_path(&global, "dense2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        let local = join_path(prefix, "local");
        self.local.conv1.visit_mut(&join_path(&local, "conv1"), f);
        self.local.bn1.visit_mut(&join_path(&local, "bn1"), f);
        self.local.conv3.visit_mut(&join_path(&local, "conv3"), f);
        self.local.bn2.visit_mut(&join_path(&local, "bn2"), f);
        let global = join_path(prefix, "global");
        self.global.dense1.visit_mut(&join_path(&global, "dense1"), f);
        self.global.dense2.visit_mut(&join_path(&global, "dense2"), f);
    }
}

/// Tape handles for the local path.
#[derive(Debug, Clone, Copy)]
pub struct LocalVars {
    pub f4_t: Var,
    pub f4_conv: Var,
    pub f4_rgbd: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalVars {
    pub f5_t: Var,
    pub f5_gap: Var,
    pub f5_dense: Var,
    pub f5_rgbd: Var,
}

pub(crate) fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    a.dims3(op)?;
    b.dims3(op)?;
    for (axis, name) in ["height", "width", "channels"].iter().enumerate() {
        if a.shape()[axis] != b.shape()[axis] {
            return Err(Error::shape(op, *name, a.shape()[axis], b.shape()[axis]));
        }
    }
    Ok(())
}

pub fn local_graph<T: Scalar>(
    g: &mut Graph<T>,
    f4_rgb: Var,
    f4_d: Var,
    p: &LocalParams<T>,
    prefix: &str,
) -> Result<LocalVars> {
    same_shape("mlge_local", g.value(f4_rgb), g.value(f4_d))?;
    let f4_t = g.apply(Op::Add, &[f4_rgb, f4_d])?;
    let x = g.conv(f4_t, &p.conv1, &join_path(prefix, "conv1"))?;
    let x = g.bn_relu(x, &p.bn1, &join_path(prefix, "bn1"))?;
    let x = g.conv(x, &p.conv3, &join_path(prefix, "conv3"))?;
    let f4_conv = g.bn_relu(x, &p.bn2, &join_path(prefix, "bn2"))?;
    let f4_rgbd = g.apply(Op::Mul, &[f4_conv, f4_t])?;
    Ok(LocalVars { f4_t, f4_conv, f4_rgbd })
}

pub fn global_graph<T: Scalar>(
    g: &mut Graph<T>,
    f5_rgb: Var,
    f5_d: Var,
    p: &GlobalParams<T>,
    prefix: &str,
) -> Result<GlobalVars> {
    same_shape("mlge_global", g.value(f5_rgb), g.value(f5_d))?;
    let f5_t = g.apply(Op::Add, &[f5_rgb, f5_d])?;
    let f5_gap = g.apply(Op::GlobalAvgPool, &[f5_t])?;
    let hidden = g.dense(f5_gap, &p.dense1, &join_path(prefix, "dense1"))?;
    let f5_dense = g.dense(hidden, &p.dense2, &join_path(prefix, "dense2"))?;
    let f5_rgbd = g.apply(Op::Mul, &[f5_t, f5_dense])?;
    Ok(GlobalVars {
        f5_t,
        f5_gap,
        f5_dense,
        f5_rgbd,
    })
}

#[derive(Debug, Clone)]
pub struct LocalOutputs<T: Scalar = f32> {
    pub f4_t: Tensor<T>,
    pub f4_conv: Tensor<T>,
    pub f4_rgbd: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct GlobalOutputs<T: Scalar = f32> {
    pub f5_t: Tensor<T>,
    pub f5_gap: Tensor<T>,
    pub f5_dense: Tensor<T>,
    pub f5_rgbd: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct MlgeOutputs<T: Scalar = f32> {
    pub local: LocalOutputs<T>,
    pub global: GlobalOutputs<T>,
}

impl<T: Scalar> MlgeOutputs<T> {
    pub fn f4_rgbd(&self) -> &Tensor<T> {
        &self.local.f4_rgbd
    }

    pub fn f5_rgbd(&self) -> &Tensor<T> {
        &self.global.f5_rgbd
    }
}

pub fn mlge_local<T: Scalar>(f4_rgb: &Tensor<T>, f4_d: &Tensor<T>, p: &MlgeParams<T>) -> Result<LocalOutputs<T>> {
    let mut g = Graph::new();
    let a = g.input(f4_rgb.clone());
    let b = g.input(f4_d.clone());
    let v = local_graph(&mut g, a, b, &p.local, "mlge.local")?;
    Ok(LocalOutputs {
        f4_t: g.value(v.f4_t).clone(),
        f4_conv: g.value(v.f4_conv).clone(),
        f4_rgbd: g.value(v.f4_rgbd).clone(),
    })
}

pub fn mlge_global<T: Scalar>(f5_rgb: &Tensor<T>, f5_d: &Tensor<T>, p: &MlgeParams<T>) -> Result<GlobalOutputs<T>> {
    let mut g = Graph::new();
    let a = g.input(f5_rgb.clone());
    let b = g.input(f5_d.clone());
    let v = global_graph(&mut g, a, b, &p.global, "mlge.global")?;
    Ok(GlobalOutputs {
        f5_t: g.value(v.f5_t).clone(),
        f5_gap: g.value(v.f5_gap).clone(),
        f5_dense: g.value(v.f5_dense).clone(),
        f5_rgbd: g.value(v.f5_rgbd).clone(),
    })
}

pub fn mlge<T: Scalar>(
    f4_pair: (&Tensor<T>, &Tensor<T>),
    f5_pair: (&Tensor<T>, &Tensor<T>),
    p: &MlgeParams<T>,
) -> Result<MlgeOutputs<T>> {
    Ok(MlgeOutputs {
        local: mlge_local(f4_pair.0, f4_pair.1, p)?,
        global: mlge_global(f5_pair.0, f5_pair.1, p)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::verify::{compose, oracle, random_tensor};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_depth_keeps_rgb_sum() {
        let mut r = rng(1);
        let p = MlgeParams::<f32>::init(&mut r, 4, 8, 4).unwrap();
        let rgb = random_tensor(&mut r, &[3, 3, 4], -1.0, 1.0);
        let out = mlge_local(&rgb, &Tensor::zeros(&[3, 3, 4]).unwrap(), &p).unwrap();
        assert!(out.f4_t.bit_eq(&rgb));
    }

    #[test]
    fn all_ones_local_gate_is_identity() {
        let mut p = MlgeParams::<f32>::zeroed(4, 8, 4).unwrap();
        p.local.bn2.beta = Tensor::ones(&[4]).unwrap();
        let mut r = rng(2);
        let a = random_tensor(&mut r, &[3, 3, 4], -1.0, 1.0);
        let b = random_tensor(&mut r, &[3, 3, 4], -1.0, 1.0);
        let out = mlge_local(&a, &b, &p).unwrap();
        assert!(out.f4_conv.data().iter().all(|&v| v == 1.0));
        assert!(out.f4_rgbd.bit_eq(&out.f4_t));
    }

    #[test]
    fn zero_parameter_global_gate_halves() {
        let p = MlgeParams::<f32>::zeroed(4, 8, 4).unwrap();
        let mut r = rng(3);
        let a = random_tensor(&mut r, &[2, 2, 8], -1.0, 1.0);
        let b = random_tensor(&mut r, &[2, 2, 8], -1.0, 1.0);
        let out = mlge_global(&a, &b, &p).unwrap();
        assert!(out.f5_dense.data().iter().all(|&v| v == 0.5));
        let half = out.f5_t.map(|v| v * 0.5);
        assert!(out.f5_rgbd.bit_eq(&half));
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let mut r = rng(4);
        let p = MlgeParams::<f32>::init(&mut r, 4, 8, 4).unwrap();
        let z4 = Tensor::zeros(&[4, 4, 4]).unwrap();
        let z5 = Tensor::zeros(&[2, 2, 8]).unwrap();
        let out = mlge((&z4, &z4), (&z5, &z5), &p).unwrap();
        assert!(out.f4_rgbd().data().iter().all(|&v| v == 0.0));
        assert!(out.f5_rgbd().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_modalities_name_the_axis() {
        let p = MlgeParams::<f32>::zeroed(4, 8, 4).unwrap();
        let a = Tensor::zeros(&[3, 3, 4]).unwrap();
        let b = Tensor::zeros(&[3, 2, 4]).unwrap();
        let err = mlge_local(&a, &b, &p).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn reduction_must_divide_channels() {
        assert!(MlgeParams::<f32>::zeroed(4, 10, 4).is_err());
        assert!(MlgeParams::<f32>::zeroed(4, 8, 0).is_err());
    }

    #[test]
    fn modality_swap_is_bit_identical() {
        let mut r = rng(5);
        let p = MlgeParams::<f32>::init(&mut r, 4, 8, 4).unwrap();
        let a4 = random_tensor(&mut r, &[4, 4, 4], -1.0, 1.0);
        let b4 = random_tensor(&mut r, &[4, 4, 4], -1.0, 1.0);
        let a5 = random_tensor(&mut r, &[2, 2, 8], -1.0, 1.0);
        let b5 = random_tensor(&mut r, &[2, 2, 8], -1.0, 1.0);
        let x = mlge((&a4, &b4), (&a5, &b5), &p).unwrap();
        let y = mlge((&b4, &a4), (&b5, &a5), &p).unwrap();
        assert!(x.f4_rgbd().bit_eq(y.f4_rgbd()));
        assert!(x.f5_rgbd().bit_eq(y.f5_rgbd()));
    }

    #[test]
    fn local_matches_composed_oracle() {
        let mut r = rng(6);
        let p = MlgeParams::<f64>::init(&mut r, 8, 8, 4).unwrap();
        let a = random_tensor(&mut r, &[6, 6, 8], -1.0, 1.0);
        let b = random_tensor(&mut r, &[6, 6, 8], -1.0, 1.0);
        let out = mlge_local(&a, &b, &p).unwrap();
        let want = compose::mlge_local(&a, &b, &p.local);
        assert!(oracle::max_abs_err(&out.f4_rgbd, want.data()) <= 1e-5);
    }

    #[test]
    fn global_matches_composed_oracle() {
        let mut r = rng(7);
        let p = MlgeParams::<f64>::init(&mut r, 4, 8, 4).unwrap();
        let a = random_tensor(&mut r, &[4, 4, 8], -1.0, 1.0);
        let b = random_tensor(&mut r, &[4, 4, 8], -1.0, 1.0);
        let out = mlge_global(&a, &b, &p).unwrap();
        let want = compose::mlge_global(&a, &b, &p.global);
        assert!(oracle::max_abs_err(&out.f5_rgbd, want.data()) <= 1e-5);
    }
}
