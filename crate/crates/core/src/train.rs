//! Composite loss, AdamW and the minibatch training loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{fusion_graph, inputs, FusionParams, FusionVars, LabeledSample};
use crate::ops::Op;
use crate::params::{ParamKind, Parameterized};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LAMBDA_FR: f64 = 0.1;

/// Handles for one sample's loss on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub fusion: FusionVars,
    pub cross_entropy: Var,
    pub regularizer: Var,
    pub loss: Var,
}

fn modality_gap<T: Scalar>(g: &mut Graph<T>, rgb: Var, d: Var) -> Result<Var> {
    let a = g.apply(Op::GlobalAvgPool, &[rgb])?;
    let b = g.apply(Op::GlobalAvgPool, &[d])?;
    let diff = g.apply(Op::Sub, &[a, b])?;
    g.apply(Op::SumSquares, &[diff])
}

/// Cross-entropy plus `lambda_fr` times the mean over both pyramid levels of
/// the squared distance between pooled RGB and depth features.
pub fn loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    sample: &LabeledSample<T>,
    p: &FusionParams<T>,
    lambda_fr: f64,
) -> Result<LossVars> {
    sample.features.check_dims(&p.config.dims)?;
    let x = inputs(g, &sample.features);
    let fusion = fusion_graph(g, x, p)?;
    let cross_entropy = g.apply(
        Op::CrossEntropy {
            label: sample.label.index(),
        },
        &[fusion.head.logits],
    )?;
    let r4 = modality_gap(g, x.f4_rgb, x.f4_d)?;
    let r5 = modality_gap(g, x.f5_rgb, x.f5_d)?;
    let sum = g.apply(Op::Add, &[r4, r5])?;
    let regularizer = g.apply(
        Op::Scale {
            factor: T::from_f64_lossy(0.5),
        },
        &[sum],
    )?;
    let weighted = g.apply(
        Op::Scale {
            factor: T::from_f64_lossy(lambda_fr),
        },
        &[regularizer],
    )?;
    let loss = g.apply(Op::Add, &[cross_entropy, weighted])?;
    Ok(LossVars {
        fusion,
        cross_entropy,
        regularizer,
        loss,
    })
}

#[derive(Debug, Clone)]
pub struct BatchLoss<T: Scalar = f32> {
    /// Batch means.
    pub loss: f64,
    pub cross_entropy: f64,
    pub regularizer: f64,
    pub correct: usize,
    /// Mean gradient per learnable parameter path.
    pub grads: BTreeMap<String, Tensor<T>>,
}

struct SampleResult<T: Scalar> {
    loss: f64,
    ce: f64,
    reg: f64,
    correct: bool,
    grads: BTreeMap<String, Tensor<T>>,
}

fn sample_loss<T: Scalar>(
    s: &LabeledSample<T>,
    p: &FusionParams<T>,
    lambda_fr: f64,
    backward: bool,
) -> Result<SampleResult<T>> {
    let mut g = Graph::new();
    let v = loss_graph(&mut g, s, p, lambda_fr)?;
    let scalar = |var: Var| g.value(var).data()[0].to_f64_lossy();
    let predicted = crate::ops::argmax(g.value(v.fusion.head.probs).data());
    let grads = if backward {
        g.backward_scalar(v.loss)?.by_path()?
    } else {
        BTreeMap::new()
    };
    Ok(SampleResult {
        loss: scalar(v.loss),
        ce: scalar(v.cross_entropy),
        reg: scalar(v.regularizer),
        correct: predicted == s.label.index(),
        grads,
    })
}

fn batch_loss<T: Scalar>(
    batch: &[&LabeledSample<T>],
    p: &FusionParams<T>,
    lambda_fr: f64,
    backward: bool,
) -> Result<BatchLoss<T>> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    // parallel per-sample work, reduced in input order
    let results: Vec<SampleResult<T>> = batch
        .par_iter()
        .map(|s| sample_loss(s, p, lambda_fr, backward))
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    let mut out = BatchLoss {
        loss: 0.0,
        cross_entropy: 0.0,
        regularizer: 0.0,
        correct: 0,
        grads: BTreeMap::new(),
    };
    for r in results {
        out.loss += r.loss;
        out.cross_entropy += r.ce;
        out.regularizer += r.reg;
        out.correct += usize::from(r.correct);
        for (path, grad) in r.grads {
            match out.grads.get_mut(&path) {
                Some(acc) => *acc = crate::ops::ewise_add(acc, &grad)?,
                None => {
                    out.grads.insert(path, grad);
                }
            }
        }
    }
    out.loss /= n;
    out.cross_entropy /= n;
    out.regularizer /= n;
    let inv = T::from_f64_lossy(1.0 / n);
    for g in out.grads.values_mut() {
        *g = g.map(|v| v * inv);
    }
    Ok(out)
}

/// Mean loss over `batch` and its parameter gradients.
pub fn fusion_loss<T: Scalar>(batch: &[LabeledSample<T>], p: &FusionParams<T>, lambda_fr: f64) -> Result<BatchLoss<T>> {
    let refs: Vec<_> = batch.iter().collect();
    batch_loss(&refs, p, lambda_fr, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Forward-only loss and accuracy.
pub fn evaluate<T: Scalar>(samples: &[LabeledSample<T>], p: &FusionParams<T>, lambda_fr: f64) -> Result<Evaluation> {
    let refs: Vec<_> = samples.iter().collect();
    let b = batch_loss(&refs, p, lambda_fr, false)?;
    Ok(Evaluation {
        loss: b.loss,
        accuracy: b.correct as f64 / samples.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub patience: usize,
    pub lambda_fr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            patience: 10,
            lambda_fr: DEFAULT_LAMBDA_FR,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("train.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be positive".into());
        }
        for (name, x) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lambda_fr", self.lambda_fr),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("train.{name} must be finite and non-negative"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("train.{name} must lie in [0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            v.push("train.adam_epsilon must be positive".into());
        }
        v
    }

    /// Cosine decay from `learning_rate` to zero across `epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        0.5 * self.learning_rate * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
    }
}

/// Decoupled-weight-decay Adam over the learnable tensors of `FusionParams`.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, p: &mut FusionParams<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let (ms, vs) = (&mut self.m, &mut self.v);
        p.visit_mut("", &mut |path, t, kind| {
            if kind != ParamKind::Learnable {
                return;
            }
            let Some(g) = grads.get(path) else { return };
            let m = ms.entry(path.to_string()).or_insert_with(|| vec![0.0; t.len()]);
            let v = vs.entry(path.to_string()).or_insert_with(|| vec![0.0; t.len()]);
            let updated: Vec<f32> = t
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (&w, &gi))| {
                    let (w, gi) = (w as f64, gi as f64);
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps) + wd * w;
                    (w - lr * update) as f32
                })
                .collect();
            *t = Tensor::new(t.shape(), updated).expect("same shape");
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss (or the last finite state on abort).
    pub params: FusionParams<f32>,
    pub log: Vec<EpochLog>,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub aborted: Option<String>,
}

/// Minibatch training with early stopping on validation loss. `val` may be
/// empty, in which case the training loss is monitored instead.
pub fn train(
    train: &[LabeledSample<f32>],
    val: &[LabeledSample<f32>],
    init: FusionParams<f32>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let mut params = init;
    let mut opt = AdamW::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut out = TrainOutcome {
        params: params.clone(),
        log: Vec::new(),
        step_losses: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        aborted: None,
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut emit = |out: &mut TrainOutcome, entry: EpochLog| {
        on_epoch(&entry);
        out.log.push(entry);
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &train[i]).collect();
            let b = batch_loss(&batch, &params, cfg.lambda_fr, true)?;
            if !b.loss.is_finite() {
                out.aborted = Some(format!(
                    "non-finite loss at epoch {epoch}, step {}",
                    out.step_losses.len()
                ));
                out.params = params;
                return Ok(out);
            }
            out.step_losses.push(b.loss);
            loss_sum += b.loss * batch.len() as f64;
            correct += b.correct;
            opt.step(&mut params, &b.grads, lr);
        }
        let n = train.len() as f64;
        emit(
            &mut out,
            EpochLog {
                epoch,
                split: "train".into(),
                loss: loss_sum / n,
                accuracy: correct as f64 / n,
                lr,
            },
        );
        let monitored = if val.is_empty() {
            loss_sum / n
        } else {
            let e = evaluate(val, &params, cfg.lambda_fr)?;
            emit(
                &mut out,
                EpochLog {
                    epoch,
                    split: "val".into(),
                    loss: e.loss,
                    accuracy: e.accuracy,
                    lr,
                },
            );
            e.loss
        };
        if !monitored.is_finite() {
            out.aborted = Some(format!("non-finite validation loss at epoch {epoch}"));
            return Ok(out);
        }
        if monitored < best {
            best = monitored;
            since_best = 0;
            out.best_epoch = epoch;
            out.params = params.clone();
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                out.stopped_early = true;
                break;
            }
        }
    }
    Ok(out)
}

/// Fraction of `samples` whose argmax prediction equals the label.
pub fn accuracy(samples: &[LabeledSample<f32>], p: &FusionParams<f32>) -> Result<f64> {
    Ok(evaluate(samples, p, 0.0)?.accuracy)
}

pub fn class_counts<T: Scalar>(samples: &[LabeledSample<T>]) -> [usize; 3] {
    let mut c = [0; 3];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}
