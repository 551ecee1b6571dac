//! Pooled embedding and three-way classification over the two neck outputs.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Op;
use crate::params::{join_path, Activation, DenseParams, ParamKind, Parameterized};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitClass {
    PdLike,
    Normal,
    Background,
}

impl GaitClass {
    pub const ALL: [GaitClass; NUM_CLASSES] = [GaitClass::PdLike, GaitClass::Normal, GaitClass::Background];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            GaitClass::PdLike => "PD-like",
            GaitClass::Normal => "Normal",
            GaitClass::Background => "Background",
        }
    }
}

impl fmt::Display for GaitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T: Scalar = f32> {
    pub embed: DenseParams<T>,
    pub classify: DenseParams<T>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn init(rng: &mut impl Rng, pooled: usize, embed_dim: usize) -> Result<Self> {
        Ok(HeadParams {
            embed: DenseParams::init(rng, pooled, embed_dim, Activation::None)?,
            classify: DenseParams::init(rng, pooled, NUM_CLASSES, Activation::None)?,
        })
    }

    pub fn zeroed(pooled: usize, embed_dim: usize) -> Result<Self> {
        Ok(HeadParams {
            embed: DenseParams::zeroed(pooled, embed_dim, Activation::None)?,
            classify: DenseParams::zeroed(pooled, NUM_CLASSES, Activation::None)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.outputs()
    }
}

impl<T: Scalar> Parameterized<T> for HeadParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.embed.visit(&join_path(prefix, "embed"), f);
        self.classify.visit(&join_path(prefix, "classify"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.embed.visit_mut(&join_path(prefix, "embed"), f);
        self.classify.visit_mut(&join_path(prefix, "classify"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub pooled: Var,
    pub embedding: Var,
    pub logits: Var,
    pub probs: Var,
}

pub fn head_graph<T: Scalar>(
    g: &mut Graph<T>,
    f40: Var,
    f20: Var,
    p: &HeadParams<T>,
    prefix: &str,
) -> Result<HeadVars> {
    let a = g.apply(Op::GlobalAvgPool, &[f40])?;
    let b = g.apply(Op::GlobalAvgPool, &[f20])?;
    let pooled = g.apply(Op::Concat, &[a, b])?;
    let embedding = g.dense(pooled, &p.embed, &join_path(prefix, "embed"))?;
    let logits = g.dense(pooled, &p.classify, &join_path(prefix, "classify"))?;
    let probs = g.apply(Op::Softmax, &[logits])?;
    Ok(HeadVars {
        pooled,
        embedding,
        logits,
        probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_label: GaitClass,
    pub probs: [f32; NUM_CLASSES],
    pub confidence: f32,
    pub embedding: Vec<f32>,
}

impl Prediction {
    pub fn from_probs<T: Scalar>(probs: &Tensor<T>, embedding: &Tensor<T>) -> Result<Self> {
        if probs.len() != NUM_CLASSES {
            return Err(Error::shape("classify", "classes", NUM_CLASSES, probs.len()));
        }
        let mut p = [0f32; NUM_CLASSES];
        for (dst, src) in p.iter_mut().zip(probs.data()) {
            *dst = src.to_f64_lossy() as f32;
        }
        let best = crate::ops::argmax(probs.data());
        Ok(Prediction {
            class_label: GaitClass::from_index(best).expect("three classes"),
            probs: p,
            confidence: p[best],
            embedding: embedding.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        })
    }
}

fn run<T: Scalar>(f40: &Tensor<T>, f20: &Tensor<T>, p: &HeadParams<T>) -> Result<(Graph<T>, HeadVars)> {
    let mut g = Graph::new();
    let a = g.input(f40.clone());
    let b = g.input(f20.clone());
    let v = head_graph(&mut g, a, b, p, "head")?;
    Ok((g, v))
}

pub fn embed<T: Scalar>(f40: &Tensor<T>, f20: &Tensor<T>, p: &HeadParams<T>) -> Result<Tensor<T>> {
    let (g, v) = run(f40, f20, p)?;
    Ok(g.value(v.embedding).clone())
}

pub fn classify<T: Scalar>(f40: &Tensor<T>, f20: &Tensor<T>, p: &HeadParams<T>) -> Result<Prediction> {
    let (g, v) = run(f40, f20, p)?;
    Prediction::from_probs(g.value(v.probs), g.value(v.embedding))
}
