//! Directional finite-difference checks through whole model blocks.
//!
//! Each point perturbs every input and every bound learnable parameter
//! jointly along one random unit direction. Large graphs contain thousands of
//! ReLU and max sites, so the kink margin here is tied to the (much smaller)
//! step rather than to the per-op margin.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::fd::relative_error;
use super::random_tensor;
use super::suite::{CheckRow, GRAD_TOLERANCE};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::head::GaitClass;
use crate::mlge::{self, MlgeParams};
use crate::model::{FeatureSample, FusionParams, LabeledSample, ModelConfig, PyramidDims};
use crate::neck::{self, NeckParams};
use crate::params::{ParamKind, Parameterized};
use crate::tensor::Tensor;
use crate::train::{loss_graph, DEFAULT_LAMBDA_FR};

type T64 = Tensor<f64>;

/// Step along a unit-norm direction.
pub const COMPOSITE_STEP: f64 = 1e-6;
/// Points whose graph has a kink closer than this are redrawn.
pub const COMPOSITE_KINK_MARGIN: f64 = 1e-5;

const MAX_DRAWS_PER_POINT: usize = 200;

/// Builds the block on `g` from `inputs`; returns the input leaves and the
/// outputs to project onto random upstream gradients.
type Build<'a, P> = dyn Fn(&mut Graph<f64>, &[T64], &P) -> Result<(Vec<Var>, Vec<Var>)> + 'a;

fn learnable<P: Parameterized<f64>>(p: &P, prefix: &str, bound: &BTreeMap<String, T64>) -> Vec<(String, T64)> {
    let mut out = Vec::new();
    p.visit(prefix, &mut |path, t, kind| {
        if kind == ParamKind::Learnable && bound.contains_key(path) {
            out.push((path.to_string(), t.clone()));
        }
    });
    out
}

fn with_params<P: Parameterized<f64> + Clone>(p: &P, prefix: &str, values: &BTreeMap<&str, &T64>) -> P {
    let mut q = p.clone();
    q.visit_mut(prefix, &mut |path, t, _| {
        if let Some(v) = values.get(path) {
            *t = (*v).clone();
        }
    });
    q
}

fn axpy(x: &T64, d: &[f64], s: f64) -> T64 {
    let data = x.data().iter().zip(d).map(|(a, b)| a + s * b).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// One check at a fixed point. Returns `None` when the point sits too close
/// to a kink.
fn check_point<P: Parameterized<f64> + Clone>(
    params: &P,
    prefix: &str,
    inputs: &[T64],
    build: &Build<'_, P>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let mut g = Graph::new();
    let (in_vars, outs) = build(&mut g, inputs, params)?;
    if g.kink_distance() < COMPOSITE_KINK_MARGIN {
        return Ok(None);
    }
    let seeds: Vec<T64> = outs
        .iter()
        .map(|&v| random_tensor(rng, g.value(v).shape(), -1.0, 1.0))
        .collect();

    let mut input_grads: Vec<T64> = inputs
        .iter()
        .map(|x| Tensor::zeros(x.shape()).expect("live shape"))
        .collect();
    let mut param_grads: BTreeMap<String, T64> = BTreeMap::new();
    for (&out, seed) in outs.iter().zip(&seeds) {
        let grads = g.backward(out, seed.clone())?;
        for (acc, &v) in input_grads.iter_mut().zip(&in_vars) {
            if let Some(gv) = grads.get(v) {
                *acc = crate::ops::ewise_add(acc, gv)?;
            }
        }
        for (path, gp) in grads.by_path()? {
            match param_grads.get_mut(&path) {
                Some(acc) => *acc = crate::ops::ewise_add(acc, &gp)?,
                None => {
                    param_grads.insert(path, gp);
                }
            }
        }
    }

    let bound = learnable(params, prefix, &param_grads);
    let mut point: Vec<&T64> = inputs.iter().collect();
    point.extend(bound.iter().map(|(_, t)| t));
    let mut grads: Vec<&T64> = input_grads.iter().collect();
    grads.extend(bound.iter().map(|(path, _)| &param_grads[path]));

    let mut dir: Vec<Vec<f64>> = point
        .iter()
        .map(|t| (0..t.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().flatten().for_each(|v| *v /= norm);

    let eval = |s: f64| -> Result<f64> {
        let moved: Vec<T64> = point.iter().zip(&dir).map(|(t, d)| axpy(t, d, s)).collect();
        let (xs, ps) = moved.split_at(inputs.len());
        let values: BTreeMap<&str, &T64> = bound.iter().map(|(p, _)| p.as_str()).zip(ps).collect();
        let q = with_params(params, prefix, &values);
        let mut g = Graph::new();
        let (_, outs) = build(&mut g, xs, &q)?;
        Ok(outs.iter().zip(&seeds).map(|(&v, u)| g.value(v).dot(u)).sum())
    };
    let numeric = (eval(COMPOSITE_STEP)? - eval(-COMPOSITE_STEP)?) / (2.0 * COMPOSITE_STEP);
    let analytic: f64 = grads
        .iter()
        .zip(&dir)
        .map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(Some(relative_error(&[analytic], &[numeric])))
}

fn run_row<P: Parameterized<f64> + Clone>(
    name: &str,
    points: usize,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<(P, Vec<T64>)>,
    build: &Build<'_, P>,
) -> Result<CheckRow> {
    let mut row = CheckRow {
        name: name.to_string(),
        instances: 0,
        required: points,
        worst: 0.0,
        tolerance: GRAD_TOLERANCE,
        rejected: 0,
    };
    for _ in 0..points {
        for _ in 0..MAX_DRAWS_PER_POINT {
            let (p, inputs) = draw(rng)?;
            match check_point(&p, prefix, &inputs, build, rng)? {
                None => row.rejected += 1,
                Some(err) => {
                    row.instances += 1;
                    row.worst = if err.is_nan() {
                        f64::INFINITY
                    } else {
                        row.worst.max(err)
                    };
                    break;
                }
            }
        }
    }
    Ok(row)
}

fn map(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> T64 {
    random_tensor(rng, &shape, -1.0, 1.0)
}

pub(super) fn composite_rows(rng: &mut ChaCha8Rng, points: usize) -> Result<Vec<CheckRow>> {
    let dims = PyramidDims::REDUCED;
    let (c4, c5) = (dims.c4(), dims.c5());
    let r = mlge::DEFAULT_REDUCTION;
    let mut rows = Vec::new();

    rows.push(run_row(
        "mlge_local",
        points,
        rng,
        "mlge",
        |rng| {
            Ok((
                MlgeParams::init(rng, c4, c5, r)?,
                vec![map(rng, dims.f4), map(rng, dims.f4)],
            ))
        },
        &|g, xs, p: &MlgeParams<f64>| {
            let (a, b) = (g.input(xs[0].clone()), g.input(xs[1].clone()));
            let v = mlge::local_graph(g, a, b, &p.local, "mlge.local")?;
            Ok((vec![a, b], vec![v.f4_rgbd]))
        },
    )?);

    rows.push(run_row(
        "mlge_global",
        points,
        rng,
        "mlge",
        |rng| {
            Ok((
                MlgeParams::init(rng, c4, c5, r)?,
                vec![map(rng, dims.f5), map(rng, dims.f5)],
            ))
        },
        &|g, xs, p: &MlgeParams<f64>| {
            let (a, b) = (g.input(xs[0].clone()), g.input(xs[1].clone()));
            let v = mlge::global_graph(g, a, b, &p.global, "mlge.global")?;
            Ok((vec![a, b], vec![v.f5_rgbd]))
        },
    )?);

    rows.push(run_row(
        "fuse_neck",
        points,
        rng,
        "neck",
        |rng| {
            Ok((
                NeckParams::init(rng, c4, c5)?,
                vec![map(rng, dims.f4), map(rng, dims.f5)],
            ))
        },
        &|g, xs, p: &NeckParams<f64>| {
            let (a, b) = (g.input(xs[0].clone()), g.input(xs[1].clone()));
            let v = neck::neck_graph(g, a, b, p, "neck")?;
            Ok((vec![a, b], vec![v.f40, v.f20]))
        },
    )?);

    let config = ModelConfig::reduced();
    let mut label = 0;
    let mut draw_label = move || {
        label = (label + 1) % 3;
        GaitClass::from_index(label).expect("three classes")
    };
    rows.push(run_row(
        "fusion_loss",
        points,
        rng,
        "",
        |rng| {
            let p = FusionParams::<f64>::init(config, rng.random())?;
            let xs = vec![
                map(rng, dims.f4),
                map(rng, dims.f4),
                map(rng, dims.f5),
                map(rng, dims.f5),
            ];
            Ok((Labeled(p, draw_label()), xs))
        },
        &|g, xs, Labeled(p, label): &Labeled| {
            let sample = LabeledSample {
                features: FeatureSample {
                    f4_rgb: xs[0].clone(),
                    f4_d: xs[1].clone(),
                    f5_rgb: xs[2].clone(),
                    f5_d: xs[3].clone(),
                },
                label: *label,
            };
            let v = loss_graph(g, &sample, p, DEFAULT_LAMBDA_FR)?;
            let i = v.fusion.inputs;
            Ok((vec![i.f4_rgb, i.f4_d, i.f5_rgb, i.f5_d], vec![v.loss]))
        },
    )?);
    Ok(rows)
}

/// Model parameters plus the label the loss is evaluated against.
#[derive(Clone)]
struct Labeled(FusionParams<f64>, GaitClass);

impl Parameterized<f64> for Labeled {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &T64, ParamKind)) {
        self.0.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T64, ParamKind)) {
        self.0.visit_mut(prefix, f);
    }
}
