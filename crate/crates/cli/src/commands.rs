use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gaitfuse_core::config::DimsSpec;
use gaitfuse_core::dataset::{self, write_json};
use gaitfuse_core::heatmap::{export_heatmap, named_maps};
use gaitfuse_core::model::{self, forward, load_checkpoint, save_checkpoint, DimsPreset};
use gaitfuse_core::preprocess::align_sequence;
use gaitfuse_core::report::{generate_reports, FrameReport, LlmClient, LlmEndpointConfig};
use gaitfuse_core::train::{train, EpochLog};
use gaitfuse_core::verify::{gradient_suite, kernel_oracle_suite};
use gaitfuse_core::{FusionParams, PipelineConfig, Prediction};
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, DimsArg, GlobalOpts};

/// Bad user input that is not a core library error.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

/// Config file (if any) with command-line overrides applied, validated.
pub fn resolve_config(g: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(url) = &g.llm_url {
        let base = cfg.llm.take().unwrap_or_default();
        cfg.llm = Some(LlmEndpointConfig {
            url: url.clone(),
            ..base
        });
    }
    if let Some(dir) = &g.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(d) = g.dims {
        cfg.dims = DimsSpec::Preset(match d {
            DimsArg::Standard => DimsPreset::Standard,
            DimsArg::Reduced => DimsPreset::Reduced,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Preprocess { input } => preprocess(&cfg, &input),
        Command::GenSynthetic => gen_synthetic(&cfg),
        Command::Train { features } => train_cmd(&cfg, &features_root(&cfg, features)),
        Command::Infer { features, checkpoint } => infer_cmd(&cfg, &features_root(&cfg, features), checkpoint),
        Command::Report { predictions, meta_root } => report_cmd(&cfg, predictions, meta_root),
        Command::Heatmap {
            features,
            checkpoint,
            sequence,
            frame,
        } => heatmap_cmd(&cfg, &features_root(&cfg, features), checkpoint, sequence, frame),
        Command::Bench { frames } => bench(&cfg, cli.global.dims.is_some(), frames),
        Command::Selftest { instances, points } => selftest(&cfg, instances, points),
    })
}

fn features_root(cfg: &PipelineConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.out_dir.join("features"))
}

fn preprocess(cfg: &PipelineConfig, input: &Path) -> Result<()> {
    let out = cfg.out_dir.join("aligned");
    let sequences = dataset::list_sequences(input, "rgb")?;
    if sequences.is_empty() {
        bail!(invalid(format!(
            "no sequences with an rgb/ directory under {}",
            input.display()
        )));
    }
    let mut frames = 0;
    for name in &sequences {
        let raw = dataset::read_raw_sequence(&input.join(name))?;
        let aligned = align_sequence(&raw.pairs, &cfg.preprocess).with_context(|| format!("sequence {name}"))?;
        dataset::write_aligned_sequence(&out.join(name), &raw.frames, &aligned, &raw.meta)?;
        frames += aligned.len();
    }
    println!(
        "aligned {frames} frames from {} sequences into {}",
        sequences.len(),
        out.display()
    );
    Ok(())
}

fn gen_synthetic(cfg: &PipelineConfig) -> Result<()> {
    let out = cfg.out_dir.join("features");
    let labels = dataset::write_synthetic(&out, &cfg.synth())?;
    println!("wrote {} synthetic samples to {}", labels.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &PipelineConfig, features: &Path) -> Result<()> {
    let (train_set, val_set) = dataset::load_labeled(features)?;
    let dims = cfg.model().dims;
    for s in train_set.iter().chain(&val_set) {
        s.features.check_dims(&dims)?;
    }
    let init = FusionParams::init(cfg.model(), cfg.seed)?;
    let tc = gaitfuse_core::TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut write_err = None;
    let outcome = train(&train_set, &val_set, init, &tc, |e: &EpochLog| {
        println!(
            "epoch {:>3} {:<5} loss {:.5} acc {:.4} lr {:.2e}",
            e.epoch, e.split, e.loss, e.accuracy, e.lr
        );
        if let Err(err) = serde_json::to_writer(&mut log, e)
            .map_err(std::io::Error::from)
            .and_then(|_| writeln!(log))
        {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing training log");
    }
    log.flush()?;
    let ckpt = cfg.out_dir.join("checkpoint");
    save_checkpoint(&ckpt, &outcome.params)?;
    if let Some(reason) = outcome.aborted {
        bail!(
            "training aborted: {reason}; last finite parameters saved to {}",
            ckpt.display()
        );
    }
    println!(
        "best epoch {}; checkpoint written to {}",
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn load_params(cfg: &PipelineConfig, checkpoint: Option<PathBuf>) -> Result<FusionParams> {
    let default = cfg.out_dir.join("checkpoint");
    let path = match checkpoint {
        Some(p) => Some(p),
        None => default.join(model::MANIFEST_FILE).exists().then_some(default),
    };
    match path {
        Some(p) => {
            let params = load_checkpoint(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if params.config != cfg.model() {
                bail!(invalid(format!(
                    "checkpoint {} was saved with a different model config",
                    p.display()
                )));
            }
            Ok(params)
        }
        None => {
            log::warn!("no checkpoint found; using seeded initial parameters");
            Ok(FusionParams::init(cfg.model(), cfg.seed)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub sequence: String,
    pub frame: usize,
    pub prediction: Prediction,
}

fn infer_cmd(cfg: &PipelineConfig, features: &Path, checkpoint: Option<PathBuf>) -> Result<()> {
    use rayon::prelude::*;

    let params = load_params(cfg, checkpoint)?;
    let frames = dataset::feature_frames(features)?;
    if frames.is_empty() {
        bail!(invalid(format!("no feature frames under {}", features.display())));
    }
    let dims = cfg.model().dims;
    // collect() keeps input order whatever the completion order
    let preds: Vec<FramePrediction> = frames
        .par_iter()
        .map(|(seq, frame)| -> Result<FramePrediction> {
            let s = dataset::read_features(&features.join(seq), *frame)?;
            s.check_dims(&dims).with_context(|| format!("{seq} frame {frame}"))?;
            Ok(FramePrediction {
                sequence: seq.clone(),
                frame: *frame,
                prediction: gaitfuse_core::infer(&s, &params)?,
            })
        })
        .collect::<Result<_>>()?;
    let out = cfg.out_dir.join("predictions.json");
    write_json(&out, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn report_cmd(cfg: &PipelineConfig, predictions: Option<PathBuf>, meta_root: Option<PathBuf>) -> Result<()> {
    let pred_path = predictions.unwrap_or_else(|| cfg.out_dir.join("predictions.json"));
    let text = fs::read_to_string(&pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
    let preds: Vec<FramePrediction> =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", pred_path.display())))?;
    let meta_root = meta_root.unwrap_or_else(|| cfg.out_dir.join("features"));

    let mut metas = std::collections::BTreeMap::new();
    let mut items = Vec::with_capacity(preds.len());
    for p in &preds {
        if !metas.contains_key(&p.sequence) {
            let m = dataset::read_meta(&meta_root.join(&p.sequence))?;
            metas.insert(p.sequence.clone(), m);
        }
        let mut meta = metas[&p.sequence].clone();
        meta.frame_index = p.frame as u64;
        items.push((p.prediction.clone(), meta));
    }

    let client = match &cfg.llm {
        Some(llm) => Some(LlmClient::new(llm.clone())?),
        None => None,
    };
    let reports = generate_reports(client.as_ref(), &items, cfg.workers());
    let out = cfg.out_dir.join("reports");
    let mut from_llm = 0;
    for ((p, (prediction, metadata)), report) in preds.iter().zip(items).zip(reports) {
        from_llm += usize::from(report.source == gaitfuse_core::report::ReportSource::Llm);
        fs::create_dir_all(out.join(&p.sequence))?;
        fs::write(
            dataset::frame_output(&out, &p.sequence, p.frame, "txt"),
            report.to_string(),
        )?;
        let record = FrameReport {
            prediction,
            metadata,
            report,
        };
        write_json(&dataset::frame_output(&out, &p.sequence, p.frame, "json"), &record)?;
    }
    println!(
        "wrote {} reports ({} from the language model, {} from the template) to {}",
        preds.len(),
        from_llm,
        preds.len() - from_llm,
        out.display()
    );
    Ok(())
}

fn heatmap_cmd(
    cfg: &PipelineConfig,
    features: &Path,
    checkpoint: Option<PathBuf>,
    sequence: Option<String>,
    frame: usize,
) -> Result<()> {
    let params = load_params(cfg, checkpoint)?;
    let seq = match sequence {
        Some(s) => s,
        None => dataset::list_sequences(features, dataset::FEATURE_DIRS[0])?
            .into_iter()
            .next()
            .ok_or_else(|| invalid(format!("no feature sequences under {}", features.display())))?,
    };
    let sample = dataset::read_features(&features.join(&seq), frame)?;
    sample.check_dims(&cfg.model().dims)?;
    let outputs = forward(&sample, &params)?;
    let dir = cfg.out_dir.join("heatmaps").join(format!("{seq}_{frame:06}"));
    for (name, t) in named_maps(&outputs) {
        export_heatmap(t, &dir.join(format!("{name}.pgm")))?;
    }
    println!("wrote heatmaps to {}", dir.display());
    Ok(())
}

fn bench(cfg: &PipelineConfig, dims_given: bool, frames: usize) -> Result<()> {
    if frames == 0 {
        bail!(invalid("--frames must be positive"));
    }
    let model_cfg = if dims_given {
        cfg.model()
    } else {
        gaitfuse_core::ModelConfig {
            dims: gaitfuse_core::PyramidDims::STANDARD,
            ..cfg.model()
        }
    };
    model_cfg.validate()?;
    let params = FusionParams::init(model_cfg, cfg.seed)?;
    let synth = gaitfuse_core::SynthConfig {
        dims: model_cfg.dims,
        seed: cfg.seed,
        ..cfg.synth()
    };
    let sample = gaitfuse_core::synth::gen_sample(&synth, 0).features;
    // one warm-up pass
    forward(&sample, &params)?;
    let start = Instant::now();
    for _ in 0..frames {
        forward(&sample, &params)?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / frames as f64;
    let [h, w, c] = model_cfg.dims.f4;
    let [h5, w5, c5] = model_cfg.dims.f5;
    println!("dims F4 {h}x{w}x{c} F5 {h5}x{w5}x{c5}, {frames} frames");
    println!("forward ms/frame: {ms:.3}");
    Ok(())
}

fn selftest(cfg: &PipelineConfig, instances: usize, points: usize) -> Result<()> {
    let kernels = kernel_oracle_suite(cfg.seed, instances)?;
    println!("{kernels}");
    let grads = gradient_suite(cfg.seed, points)?;
    println!("{grads}");
    if !(kernels.passed() && grads.passed()) {
        bail!("self-test failed");
    }
    Ok(())
}
