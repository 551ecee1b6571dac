//! The full fusion stack: configuration, parameters, forward pass and
//! checkpoint files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::{self, GaitClass, HeadParams, HeadVars, Prediction, DEFAULT_EMBED_DIM};
use crate::mlge::{
    self, GlobalOutputs, GlobalVars, LocalOutputs, LocalVars, MlgeOutputs, MlgeParams, DEFAULT_REDUCTION,
};
use crate::neck::{self, NeckOutputs, NeckParams, NeckVars};
use crate::params::{ParamKind, Parameterized};
use crate::tensor::{read_gft, write_gft, Scalar, Tensor};

/// Extents `[H, W, C]` of the two pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidDims {
    pub f4: [usize; 3],
    pub f5: [usize; 3],
}

impl PyramidDims {
    pub const STANDARD: PyramidDims = PyramidDims {
        f4: [40, 40, 512],
        f5: [20, 20, 1024],
    };
    pub const REDUCED: PyramidDims = PyramidDims {
        f4: [10, 10, 16],
        f5: [5, 5, 32],
    };

    pub fn c4(&self) -> usize {
        self.f4[2]
    }

    pub fn c5(&self) -> usize {
        self.f5[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimsPreset {
    Standard,
    Reduced,
}

impl DimsPreset {
    pub fn dims(self) -> PyramidDims {
        match self {
            DimsPreset::Standard => PyramidDims::STANDARD,
            DimsPreset::Reduced => PyramidDims::REDUCED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: PyramidDims,
    pub reduction: usize,
    pub embed_dim: usize,
}

impl ModelConfig {
    pub fn new(dims: PyramidDims) -> Self {
        ModelConfig {
            dims,
            reduction: DEFAULT_REDUCTION,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }

    pub fn standard() -> Self {
        Self::new(PyramidDims::STANDARD)
    }

    pub fn reduced() -> Self {
        Self::new(PyramidDims::REDUCED)
    }

    /// Every closure violation, in a fixed order. Empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let PyramidDims { f4, f5 } = self.dims;
        for (name, dims) in [("f4", f4), ("f5", f5)] {
            for (axis, &e) in ["height", "width", "channels"].iter().zip(&dims) {
                if e == 0 {
                    v.push(format!("dims.{name} {axis} must be positive"));
                }
            }
        }
        if f4[0] != 2 * f5[0] || f4[1] != 2 * f5[1] {
            v.push(format!(
                "dims.f4 spatial extents {}x{} must be twice dims.f5 {}x{}",
                f4[0], f4[1], f5[0], f5[1]
            ));
        }
        if f4[2] % 2 != 0 {
            v.push(format!("dims.f4 channels {} must be even", f4[2]));
        }
        if f5[2] % 2 != 0 {
            v.push(format!("dims.f5 channels {} must be even", f5[2]));
        }
        if self.reduction == 0 {
            v.push("reduction must be positive".to_string());
        } else if f5[2] % self.reduction != 0 || f5[2] < self.reduction {
            v.push(format!(
                "dims.f5 channels {} must be a positive multiple of reduction {}",
                f5[2], self.reduction
            ));
        }
        if self.embed_dim == 0 {
            v.push("embed_dim must be positive".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T: Scalar = f32> {
    pub config: ModelConfig,
    pub mlge: MlgeParams<T>,
    pub neck: NeckParams<T>,
    pub head: HeadParams<T>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c4, c5) = (config.dims.c4(), config.dims.c5());
        Ok(FusionParams {
            config,
            mlge: MlgeParams::init(&mut rng, c4, c5, config.reduction)?,
            neck: NeckParams::init(&mut rng, c4, c5)?,
            head: HeadParams::init(&mut rng, c4 + c5, config.embed_dim)?,
        })
    }

    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (c4, c5) = (config.dims.c4(), config.dims.c5());
        Ok(FusionParams {
            config,
            mlge: MlgeParams::zeroed(c4, c5, config.reduction)?,
            neck: NeckParams::zeroed(c4, c5)?,
            head: HeadParams::zeroed(c4 + c5, config.embed_dim)?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> FusionParams<U> {
        let mut out = FusionParams::<U>::zeroed(self.config).expect("validated config");
        let mut src = BTreeMap::new();
        self.visit("", &mut |path, t, _| {
            src.insert(path.to_string(), t.cast::<U>());
        });
        out.visit_mut("", &mut |path, t, _| *t = src[path].clone());
        out
    }
}

impl<T: Scalar> Parameterized<T> for FusionParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.mlge.visit(&crate::params::join_path(prefix, "mlge"), f);
        self.neck.visit(&crate::params::join_path(prefix, "neck"), f);
        self.head.visit(&crate::params::join_path(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.mlge.visit_mut(&crate::params::join_path(prefix, "mlge"), f);
        self.neck.visit_mut(&crate::params::join_path(prefix, "neck"), f);
        self.head.visit_mut(&crate::params::join_path(prefix, "head"), f);
    }
}

/// Both modalities at both pyramid levels for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample<T: Scalar = f32> {
    pub f4_rgb: Tensor<T>,
    pub f4_d: Tensor<T>,
    pub f5_rgb: Tensor<T>,
    pub f5_d: Tensor<T>,
}

impl<T: Scalar> FeatureSample<T> {
    pub fn zeros(dims: &PyramidDims) -> Result<Self> {
        Ok(FeatureSample {
            f4_rgb: Tensor::zeros(&dims.f4)?,
            f4_d: Tensor::zeros(&dims.f4)?,
            f5_rgb: Tensor::zeros(&dims.f5)?,
            f5_d: Tensor::zeros(&dims.f5)?,
        })
    }

    pub fn check_dims(&self, dims: &PyramidDims) -> Result<()> {
        for (name, t, want) in self.named() {
            let want = if want { &dims.f4 } else { &dims.f5 };
            if t.shape() != want {
                return Err(Error::invalid(
                    "features",
                    format!("{name} has shape {:?}, expected {:?}", t.shape(), want),
                ));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Tensor<T>, bool); 4] {
        [
            ("f4_rgb", &self.f4_rgb, true),
            ("f4_d", &self.f4_d, true),
            ("f5_rgb", &self.f5_rgb, false),
            ("f5_d", &self.f5_d, false),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSample<U> {
        FeatureSample {
            f4_rgb: self.f4_rgb.cast(),
            f4_d: self.f4_d.cast(),
            f5_rgb: self.f5_rgb.cast(),
            f5_d: self.f5_d.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T: Scalar = f32> {
    pub features: FeatureSample<T>,
    pub label: GaitClass,
}

#[derive(Debug, Clone, Copy)]
pub struct InputVars {
    pub f4_rgb: Var,
    pub f4_d: Var,
    pub f5_rgb: Var,
    pub f5_d: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub inputs: InputVars,
    pub local: LocalVars,
    pub global: GlobalVars,
    pub neck: NeckVars,
    pub head: HeadVars,
}

pub fn inputs<T: Scalar>(g: &mut Graph<T>, s: &FeatureSample<T>) -> InputVars {
    InputVars {
        f4_rgb: g.input(s.f4_rgb.clone()),
        f4_d: g.input(s.f4_d.clone()),
        f5_rgb: g.input(s.f5_rgb.clone()),
        f5_d: g.input(s.f5_d.clone()),
    }
}

pub fn fusion_graph<T: Scalar>(g: &mut Graph<T>, x: InputVars, p: &FusionParams<T>) -> Result<FusionVars> {
    let local = mlge::local_graph(g, x.f4_rgb, x.f4_d, &p.mlge.local, "mlge.local")?;
    let global = mlge::global_graph(g, x.f5_rgb, x.f5_d, &p.mlge.global, "mlge.global")?;
    let neck = neck::neck_graph(g, local.f4_rgbd, global.f5_rgbd, &p.neck, "neck")?;
    let head = head::head_graph(g, neck.f40, neck.f20, &p.head, "head")?;
    Ok(FusionVars {
        inputs: x,
        local,
        global,
        neck,
        head,
    })
}

/// Every named intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct FusionOutputs<T: Scalar = f32> {
    pub mlge: MlgeOutputs<T>,
    pub neck: NeckOutputs<T>,
    pub embedding: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> FusionOutputs<T> {
    pub fn prediction(&self) -> Result<Prediction> {
        Prediction::from_probs(&self.probs, &self.embedding)
    }
}

pub fn forward<T: Scalar>(sample: &FeatureSample<T>, p: &FusionParams<T>) -> Result<FusionOutputs<T>> {
    sample.check_dims(&p.config.dims)?;
    let mut g = Graph::new();
    let x = inputs(&mut g, sample);
    let v = fusion_graph(&mut g, x, p)?;
    let val = |var: Var| g.value(var).clone();
    Ok(FusionOutputs {
        mlge: MlgeOutputs {
            local: LocalOutputs {
                f4_t: val(v.local.f4_t),
                f4_conv: val(v.local.f4_conv),
                f4_rgbd: val(v.local.f4_rgbd),
            },
            global: GlobalOutputs {
                f5_t: val(v.global.f5_t),
                f5_gap: val(v.global.f5_gap),
                f5_dense: val(v.global.f5_dense),
                f5_rgbd: val(v.global.f5_rgbd),
            },
        },
        neck: NeckOutputs::collect(&g, &v.neck),
        embedding: val(v.head.embedding),
        logits: val(v.head.logits),
        probs: val(v.head.probs),
    })
}

pub fn infer<T: Scalar>(sample: &FeatureSample<T>, p: &FusionParams<T>) -> Result<Prediction> {
    forward(sample, p)?.prediction()
}

pub const MANIFEST_FILE: &str = "manifest.json";
const CHECKPOINT_FORMAT: &str = "gaitfuse-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, String>,
}

/// Writes one GFT file per parameter path plus `manifest.json`.
pub fn save_checkpoint(dir: &Path, p: &FusionParams<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = BTreeMap::new();
    let mut result = Ok(());
    p.visit("", &mut |path, t, _| {
        if result.is_err() {
            return;
        }
        let file = format!("{path}.gft");
        result = write_gft(dir.join(&file), t);
        tensors.insert(path.to_string(), file);
    });
    result?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: p.config,
        tensors,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<FusionParams<f32>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        msg: e.to_string(),
    })?;
    let bad = |msg: String| Error::Format {
        path: manifest_path.clone(),
        msg,
    };
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut p = FusionParams::<f32>::zeroed(manifest.config)?;
    let mut expected = Vec::new();
    p.visit("", &mut |path, _, _| expected.push(path.to_string()));
    let missing: Vec<_> = expected
        .iter()
        .filter(|k| !manifest.tensors.contains_key(*k))
        .cloned()
        .collect();
    let extra: Vec<_> = manifest
        .tensors
        .keys()
        .filter(|k| !expected.contains(k))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(bad(format!(
            "missing tensors {missing:?}, unexpected tensors {extra:?}"
        )));
    }
    let mut result = Ok(());
    p.visit_mut("", &mut |path, t, _| {
        if result.is_err() {
            return;
        }
        result = read_gft(dir.join(&manifest.tensors[path])).and_then(|loaded| {
            if loaded.shape() != t.shape() {
                return Err(Error::Format {
                    path: dir.join(&manifest.tensors[path]),
                    msg: format!("shape {:?}, expected {:?}", loaded.shape(), t.shape()),
                });
            }
            *t = loaded;
            Ok(())
        });
    });
    result?;
    Ok(p)
}
