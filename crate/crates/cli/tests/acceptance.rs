//! Acceptance criteria A1-A9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use gaitfuse_core::head::GaitClass;
use gaitfuse_core::mlge::{mlge, mlge_global};
use gaitfuse_core::model::{forward, DimsPreset};
use gaitfuse_core::neck::c2psa;
use gaitfuse_core::preprocess::{depth_to_disparity, normalize_disparity};
use gaitfuse_core::report::{
    assemble_prompt, generate_reports, render_template_report, LlmClient, ReportSource, Symptom,
};
use gaitfuse_core::synth::{gen_dataset, split_dataset};
use gaitfuse_core::train::{evaluate, train};
use gaitfuse_core::verify::{gradient_suite, kernel_oracle_suite, random_tensor};
use gaitfuse_core::{
    FeatureSample, FusionParams, GaitMetadata, LlmEndpointConfig, ModelConfig, Parameterized, PipelineConfig,
    Prediction, SynthConfig, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_INSTANCES: usize = 100;
const GRADIENT_POINTS: usize = 50;
const A1_BUDGET: Duration = Duration::from_secs(60);
const A2_BUDGET: Duration = Duration::from_secs(5 * 60);
const A5_BUDGET: Duration = Duration::from_secs(10 * 60);
const PREPROCESS_FRAMES: usize = 1000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok_or<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn a1_kernel_oracles() -> Outcome {
    let r = ok_or(kernel_oracle_suite(1, ORACLE_INSTANCES))?;
    println!("{r}");
    ensure!(
        r.passed(),
        "{} rows failed",
        r.rows.iter().filter(|row| !row.passed()).count()
    );
    ensure!(
        r.rows.iter().all(|row| row.instances >= ORACLE_INSTANCES),
        "too few instances"
    );
    ensure!(r.elapsed < A1_BUDGET, "took {:?}", r.elapsed);
    Ok(format!("{} ops, {:.1}s", r.rows.len(), r.elapsed.as_secs_f64()))
}

fn a2_gradients() -> Outcome {
    let r = ok_or(gradient_suite(2, GRADIENT_POINTS))?;
    println!("{r}");
    ensure!(
        r.passed(),
        "{} rows failed",
        r.rows.iter().filter(|row| !row.passed()).count()
    );
    for name in ["mlge_local", "mlge_global", "fuse_neck", "fusion_loss"] {
        let row = r.row(name).ok_or(format!("no {name} row"))?;
        ensure!(row.instances >= GRADIENT_POINTS, "{name}: {} points", row.instances);
    }
    ensure!(r.elapsed < A2_BUDGET, "took {:?}", r.elapsed);
    Ok(format!("{} checks, {:.1}s", r.rows.len(), r.elapsed.as_secs_f64()))
}

fn a3_shapes() -> Outcome {
    let standard = ModelConfig::standard();
    let p = ok_or(FusionParams::<f32>::init(standard, 3))?;
    let out = ok_or(forward(&ok_or(FeatureSample::zeros(&standard.dims))?, &p))?;
    ensure!(
        out.neck.f40.shape() == [40, 40, 512],
        "standard F40 {:?}",
        out.neck.f40.shape()
    );
    ensure!(
        out.neck.f20.shape() == [20, 20, 1024],
        "standard F20 {:?}",
        out.neck.f20.shape()
    );

    let reduced = ModelConfig::reduced();
    let p = ok_or(FusionParams::<f32>::init(reduced, 3))?;
    let out = ok_or(forward(&ok_or(FeatureSample::zeros(&reduced.dims))?, &p))?;
    ensure!(
        out.neck.f40.shape() == reduced.dims.f4,
        "reduced F40 {:?}",
        out.neck.f40.shape()
    );
    ensure!(
        out.neck.f20.shape() == reduced.dims.f5,
        "reduced F20 {:?}",
        out.neck.f20.shape()
    );

    let invalid = [
        r#"{"dims": {"f4": [8, 8, 4], "f5": [3, 4, 8]}}"#,
        r#"{"dims": {"f4": [8, 8, 5], "f5": [4, 4, 10]}}"#,
        r#"{"dims": {"f4": [8, 8, 4], "f5": [4, 4, 6]}}"#,
        r#"{"dims": {"f4": [0, 0, 4], "f5": [0, 0, 8]}}"#,
        r#"{"dims": "huge"}"#,
        r#"{"reduction": 0}"#,
        r#"{"reduction": 7}"#,
        r#"{"embed_dim": 0}"#,
        r#"{"train": {"batch_size": 0}}"#,
        r#"{"train": {"learning_rate": -1.0}}"#,
        r#"{"preprocess": {"size": 0}}"#,
        r#"{"llm": {"url": "no-scheme"}}"#,
        r#"{"synth": {"noise_sigma": -0.5}}"#,
        r#"{"unknown_key": 1}"#,
    ];
    for text in invalid {
        let rejected = PipelineConfig::from_json(text).and_then(|c| c.validate()).is_err();
        ensure!(rejected, "accepted invalid config {text}");
    }
    let standard_cfg = ok_or(PipelineConfig::from_json(r#"{"dims": "standard"}"#))?;
    ok_or(standard_cfg.validate())?;
    ensure!(
        standard_cfg.model().dims == DimsPreset::Standard.dims(),
        "preset mismatch"
    );
    Ok(format!(
        "F40/F20 exact at both presets, {} invalid configs rejected",
        invalid.len()
    ))
}

fn a4_preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut constant = 0;
    for i in 0..PREPROCESS_FRAMES {
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let depth = if rng.random_bool(0.1) {
            constant += 1;
            let d = rng.random_range(0.3..10.0f32);
            ok_or(Tensor::full(&[h, w, 1], d))?
        } else {
            random_tensor(&mut rng, &[h, w, 1], 0.3, 10.0)
        };
        let disp = ok_or(depth_to_disparity(&depth, 0.0))?;
        let norm = ok_or(normalize_disparity(&disp))?;
        let data = norm.data();
        ensure!(data.iter().all(|v| (0.0..=1.0).contains(v)), "frame {i} out of [0, 1]");
        let (lo, hi) = disp.min_max();
        if lo == hi {
            ensure!(data.iter().all(|&v| v == 0.0), "constant frame {i} not all zeros");
        } else {
            let count = |x: f32| disp.data().iter().filter(|&&v| v == x).count();
            let zeros = data.iter().filter(|&&v| v == 0.0).count();
            let ones = data.iter().filter(|&&v| v == 1.0).count();
            ensure!(
                zeros == count(lo) && ones == count(hi),
                "frame {i}: {zeros} zeros, {ones} ones"
            );
            if count(lo) == 1 && count(hi) == 1 {
                ensure!(zeros == 1 && ones == 1, "frame {i}");
            }
        }
    }
    let two = ok_or(depth_to_disparity(&ok_or(Tensor::full(&[1, 1, 1], 2.0f32))?, 0.0))?;
    ensure!(two.data()[0] == 0.5, "D=2.0 m gave {}", two.data()[0]);
    Ok(format!(
        "{PREPROCESS_FRAMES} frames ({constant} constant), D=2.0 m -> 0.5"
    ))
}

fn bit_identical(a: &FusionParams, b: &FusionParams) -> bool {
    let mut left = Vec::new();
    a.visit("", &mut |_, t, _| left.push(t.clone()));
    let mut i = 0;
    let mut same = true;
    b.visit("", &mut |_, t, _| {
        same &= t.bit_eq(&left[i]);
        i += 1;
    });
    same && i == left.len()
}

fn a5_training() -> Outcome {
    let pool = ok_or(rayon::ThreadPoolBuilder::new().num_threads(1).build())?;
    pool.install(|| {
        let start = Instant::now();
        let synth = SynthConfig::default();
        let (train_set, val_set) = split_dataset(ok_or(gen_dataset(&synth))?, 0.8);
        let model = ModelConfig::new(synth.dims);
        let init = ok_or(FusionParams::init(model, 5))?;
        let tc = TrainConfig::default();
        ensure!(tc.epochs <= 30, "default schedule exceeds 30 epochs");
        let out = ok_or(train(&train_set, &val_set, init.clone(), &tc, |_| {}))?;
        ensure!(out.aborted.is_none(), "{:?}", out.aborted);
        let train_acc = ok_or(evaluate(&train_set, &out.params, 0.0))?.accuracy;
        let val_acc = ok_or(evaluate(&val_set, &out.params, 0.0))?.accuracy;
        ensure!(train_acc >= 0.95, "train accuracy {train_acc:.4}");
        ensure!(val_acc >= 0.90, "held-out accuracy {val_acc:.4}");

        let frozen = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            ..tc
        };
        let still = ok_or(train(&train_set, &val_set, init.clone(), &frozen, |_| {}))?;
        ensure!(
            bit_identical(&init, &still.params),
            "zero learning rate changed parameters"
        );

        let one = vec![train_set[0].clone()];
        let overfit = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 1e-3,
            lambda_fr: 0.0,
            patience: 200,
            ..tc
        };
        let fit = ok_or(train(&one, &[], init, &overfit, |_| {}))?;
        ensure!(fit.step_losses.len() <= 200, "{} steps", fit.step_losses.len());
        let final_loss = ok_or(evaluate(&one, &fit.params, 0.0))?.loss;
        ensure!(final_loss < 0.01, "single-sample loss {final_loss:.5} after 200 steps");
        let elapsed = start.elapsed();
        ensure!(elapsed < A5_BUDGET, "took {elapsed:?}");
        Ok(format!(
            "train {train_acc:.4}, held-out {val_acc:.4}, overfit loss {final_loss:.2e}, {:.1}s single-threaded",
            elapsed.as_secs_f64()
        ))
    })
}

fn a6_gates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = ModelConfig::reduced();
    let dims = model.dims;
    let zero = ok_or(FusionParams::<f32>::zeroed(model))?;
    let a = random_tensor(&mut rng, &dims.f5, -2.0, 2.0);
    let b = random_tensor(&mut rng, &dims.f5, -2.0, 2.0);
    let g = ok_or(mlge_global(&a, &b, &zero.mlge))?;
    ensure!(
        g.f5_rgbd.bit_eq(&g.f5_t.map(|v| v * 0.5)),
        "global gate is not 0.5 F5_t"
    );

    let f = random_tensor(&mut rng, &dims.f4, -2.0, 2.0);
    let y = ok_or(c2psa(&f, &zero.neck.c2psa))?;
    ensure!(y.bit_eq(&f.map(|v| v * 0.5)), "C2PSA is not 0.5 f");

    let p = ok_or(FusionParams::<f32>::init(model, 6))?;
    let z4 = ok_or(Tensor::zeros(&dims.f4))?;
    let z5 = ok_or(Tensor::zeros(&dims.f5))?;
    let out = ok_or(mlge((&z4, &z4), (&z5, &z5), &p.mlge))?;
    ensure!(out.f4_rgbd().data().iter().all(|&v| v == 0.0), "local output not zero");
    ensure!(out.f5_rgbd().data().iter().all(|&v| v == 0.0), "global output not zero");
    Ok("exact 0.5 gates and zero propagation".into())
}

const CANNED: &str = "Classification Result:\nPD-like gait pattern.\n\nConfidence:\n0.97, high.\n\n\
Data Analysis:\nReduced arm swing was reported.\n\nInterpretation:\nConsistent with parkinsonian gait.\n\n\
Recommendations:\nRefer for neurological assessment.\n";

/// Serves one canned completion per connection, in order.
fn mock_llm(contents: Vec<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    thread::spawn(move || {
        for content in contents {
            let (mut s, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(s.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = serde_json::json!({
                "model": "mock-model",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
            })
            .to_string();
            let msg = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let _ = s.write_all(msg.as_bytes());
        }
    });
    url
}

fn fast_endpoint(url: &str) -> LlmEndpointConfig {
    LlmEndpointConfig {
        max_retries: 0,
        backoff_base_ms: 1,
        timeout_ms: 2_000,
        ..LlmEndpointConfig::new(url)
    }
}

fn a7_reports() -> Outcome {
    let pred = Prediction {
        class_label: GaitClass::PdLike,
        probs: [0.97, 0.02, 0.01],
        confidence: 0.97,
        embedding: (0..32).map(|i| ((i * 5 % 13) as f32 - 6.0) / 3.0).collect(),
    };
    let meta = ok_or(GaitMetadata::new(
        "S07",
        [Symptom::ReducedArmSwing, Symptom::Freezing],
        3,
    ))?;

    let items = vec![(pred.clone(), meta.clone()); 3];
    let first = generate_reports(None, &items, 2);
    let second = generate_reports(None, &items, 1);
    let bytes = |rs: &[gaitfuse_core::ClinicalReport]| -> Result<Vec<u8>, String> {
        let mut out = ok_or(serde_json::to_vec(rs))?;
        rs.iter().for_each(|r| out.extend(r.to_string().into_bytes()));
        Ok(out)
    };
    ensure!(
        bytes(&first)? == bytes(&second)?,
        "template mode is not byte-deterministic"
    );
    ensure!(
        first.iter().all(|r| r.source == ReportSource::Template),
        "template source"
    );

    let url = mock_llm(vec![CANNED.to_string()]);
    let client = ok_or(LlmClient::with_token(fast_endpoint(&url), None))?;
    let r = client.generate_report(&pred, &meta);
    ensure!(r.source == ReportSource::Llm, "mock completion gave {:?}", r.source);
    ensure!(
        r.sections.recommendations == "Refer for neurological assessment.",
        "canned sections lost"
    );

    let malformed = CANNED.split("Interpretation").next().unwrap().to_string();
    let url = mock_llm(vec![malformed]);
    let client = ok_or(LlmClient::with_token(fast_endpoint(&url), None))?;
    let r = client.generate_report(&pred, &meta);
    ensure!(
        r.source == ReportSource::Template && r.sections.is_complete(),
        "malformed completion"
    );

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = ok_or(LlmClient::with_token(
        fast_endpoint(&format!("http://127.0.0.1:{port}/v1")),
        None,
    ))?;
    let r = client.generate_report(&pred, &meta);
    ensure!(
        r.source == ReportSource::Template && r.sections.is_complete(),
        "unreachable endpoint"
    );

    let mut sets: Vec<Vec<Symptom>> = Symptom::ALL.iter().map(|&s| vec![s]).collect();
    sets.push(
        Symptom::ALL
            .iter()
            .copied()
            .filter(|&s| s != Symptom::NoneReported)
            .collect(),
    );
    for set in sets {
        let m = ok_or(GaitMetadata::new("S", set.iter().copied(), 0))?;
        let prompt = assemble_prompt(&pred, &m).user;
        let report = render_template_report(&pred, &m).to_string();
        for s in &set {
            ensure!(prompt.contains(s.phrase()), "prompt lacks {:?}", s.phrase());
            ensure!(report.contains(s.phrase()), "template report lacks {:?}", s.phrase());
        }
    }
    Ok("template deterministic, llm round-trip, both fallbacks, symptom coverage".into())
}

fn gaitfuse(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gaitfuse"))
        .current_dir(dir)
        .env_remove("GAITFUSE_LLM_TOKEN")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn a8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for run in ["run1", "run2"] {
        for cmd in ["gen-synthetic", "infer", "report"] {
            gaitfuse(dir.path(), &["--seed", "8", "--out-dir", run, cmd])?;
        }
    }
    let a = tree(&dir.path().join("run1"));
    let b = tree(&dir.path().join("run2"));
    ensure!(a.len() == b.len(), "{} vs {} files", a.len(), b.len());
    for (path, bytes) in &a {
        ensure!(b.get(path) == Some(bytes), "{} differs", path.display());
    }
    let reports = a.keys().filter(|p| p.starts_with("reports")).count();
    ensure!(reports > 0, "no reports written");
    Ok(format!("{} files byte-identical ({reports} report files)", a.len()))
}

fn a9_bench() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stdout = gaitfuse(dir.path(), &["bench", "--frames", "1"])?;
    ensure!(
        stdout.contains("F4 40x40x512 F5 20x20x1024"),
        "not standard dims: {stdout}"
    );
    let ms: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("forward ms/frame: "))
        .ok_or(format!("no timing line: {stdout}"))?
        .trim()
        .parse()
        .map_err(|e| format!("{e}"))?;
    ensure!(ms > 0.0, "ms/frame {ms}");
    Ok(format!("{ms:.1} ms/frame at standard dims"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("A1 kernel oracles", a1_kernel_oracles),
        ("A2 gradient suite", a2_gradients),
        ("A3 shape contract", a3_shapes),
        ("A4 preprocessing", a4_preprocessing),
        ("A5 toy training", a5_training),
        ("A6 analytic gates", a6_gates),
        ("A7 report pipeline", a7_reports),
        ("A8 end-to-end determinism", a8_determinism),
        ("A9 bench smoke", a9_bench),
    ];
    // filters passed by `cargo test <name>` select criteria by substring
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut lines = Vec::new();
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => format!("FAIL {name}: {why} [{secs:.1}s]"),
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for line in &lines {
        println!("{line}");
    }
    if lines.iter().any(|l| l.starts_with("FAIL")) {
        std::process::exit(1);
    }
}
