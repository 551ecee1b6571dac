//! Whole-pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::DEFAULT_EMBED_DIM;
use crate::mlge::DEFAULT_REDUCTION;
use crate::model::{DimsPreset, ModelConfig, PyramidDims};
use crate::preprocess::PreprocessConfig;
use crate::report::LlmEndpointConfig;
use crate::synth::{BlobSpec, SynthConfig};
use crate::train::TrainConfig;

/// Either a named preset or explicit extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimsSpec {
    Preset(DimsPreset),
    Custom(PyramidDims),
}

impl DimsSpec {
    pub fn dims(self) -> PyramidDims {
        match self {
            DimsSpec::Preset(p) => p.dims(),
            DimsSpec::Custom(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub class_signal: [BlobSpec; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            n_per_class: d.n_per_class,
            noise_sigma: d.noise_sigma,
            class_signal: d.class_signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dims: DimsSpec,
    pub reduction: usize,
    pub embed_dim: usize,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub synth: SynthSection,
    /// Absent means template-only reports.
    pub llm: Option<LlmEndpointConfig>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Frame-level worker threads; 0 picks the number of CPUs.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dims: DimsSpec::Preset(DimsPreset::Reduced),
            reduction: DEFAULT_REDUCTION,
            embed_dim: DEFAULT_EMBED_DIM,
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSection::default(),
            llm: None,
            out_dir: PathBuf::from("gaitfuse-out"),
            seed: 0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    /// Parses without validating.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims.dims(),
            reduction: self.reduction,
            embed_dim: self.embed_dim,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            dims: self.dims.dims(),
            n_per_class: self.synth.n_per_class,
            noise_sigma: self.synth.noise_sigma,
            seed: self.seed,
            class_signal: self.synth.class_signal,
        }
    }

    pub fn workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    /// Every violation across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.model().violations();
        v.extend(self.preprocess.violations());
        v.extend(self.train.violations());
        v.extend(self.synth().violations().into_iter().map(|m| format!("synth.{m}")));
        if let Some(llm) = &self.llm {
            v.extend(llm.violations());
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
