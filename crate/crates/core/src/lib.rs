// Negated comparisons are deliberate: they route NaN to the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod head;
pub mod heatmap;
pub mod mlge;
pub mod model;
pub mod neck;
pub mod ops;
pub mod params;
pub mod preprocess;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use head::{GaitClass, Prediction};
pub use model::{infer, FeatureSample, FusionParams, LabeledSample, ModelConfig, PyramidDims};
pub use params::{Activation, BnParams, ConvParams, DenseParams, ParamKind, Parameterized};
pub use preprocess::{AlignedFramePair, RawFramePair};
pub use report::{ClinicalReport, GaitMetadata, LlmEndpointConfig};
pub use synth::SynthConfig;
pub use tensor::{Scalar, Tensor};
pub use train::TrainConfig;
