//! End-to-end runs of the `gaitfuse` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

const SMALL: &str = r#"{"synth": {"n_per_class": 8}, "train": {"epochs": 2, "batch_size": 4}}"#;

fn gaitfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitfuse"))
        .current_dir(dir)
        .env_remove("GAITFUSE_LLM_TOKEN")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn gaitfuse")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gaitfuse(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code plus the parsed JSON error line from stderr.
fn failure(dir: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = gaitfuse(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap_or_default();
    let json = serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"));
    (out.status.code().unwrap(), json)
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
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

fn report_jsons(out: &Path) -> Vec<serde_json::Value> {
    tree(&out.join("reports"))
        .into_iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "json"))
        .map(|(_, b)| serde_json::from_slice(&b).unwrap())
        .collect()
}

fn pipeline(dir: &Path, cfg: &str, out: &str, workers: &str, extra: &[&str]) {
    let base = ["--config", cfg, "--out-dir", out, "--workers", workers];
    for cmd in [&["gen-synthetic"][..], &["train"], &["infer"], &["heatmap"]] {
        ok(dir, &[&base[..], cmd].concat());
    }
    ok(dir, &[&base[..], extra, &["report"]].concat());
}

#[test]
fn full_pipeline_is_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline(dir.path(), &cfg, "a", "1", &[]);
    pipeline(dir.path(), &cfg, "b", "4", &[]);
    let a = tree(&dir.path().join("a"));
    let b = tree(&dir.path().join("b"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs between runs", path.display());
    }
    for name in ["predictions.json", "train_log.jsonl", "checkpoint/manifest.json"] {
        assert!(a.contains_key(Path::new(name)), "missing {name}");
    }
    // 24 frames, a .json and a .txt each
    assert_eq!(a.keys().filter(|p| p.starts_with("reports")).count(), 48);
    assert!(a.keys().any(|p| p.extension().is_some_and(|e| e == "pgm")));
}

#[test]
fn every_frame_falls_back_to_the_template_without_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline(dir.path(), &cfg, "o", "2", &[]);
    let reports = report_jsons(&dir.path().join("o"));
    assert_eq!(reports.len(), 24);
    for r in &reports {
        assert_eq!(r["report"]["source"], "template");
        for key in [
            "classification_result",
            "confidence",
            "data_analysis",
            "interpretation",
            "recommendations",
        ] {
            assert!(!r["report"]["sections"][key].as_str().unwrap().is_empty());
        }
    }
    let pd = reports
        .iter()
        .find(|r| r["metadata"]["subject_id"] == "train_pd_like")
        .unwrap();
    assert!(pd["metadata"]["symptoms"].as_array().unwrap().len() >= 2);
}

#[test]
fn unreachable_endpoint_still_yields_every_report() {
    let dir = tempfile::tempdir().unwrap();
    // bind then drop to get a port nothing listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1");
    let llm = r#"{"synth": {"n_per_class": 2}, "llm": {"url": "URL", "max_retries": 0, "backoff_base_ms": 1}}"#
        .replace("URL", &url);
    fs::write(dir.path().join("llm.json"), llm).unwrap();
    ok(dir.path(), &["--config", "llm.json", "--out-dir", "o", "gen-synthetic"]);
    ok(dir.path(), &["--config", "llm.json", "--out-dir", "o", "infer"]);
    let stdout = ok(dir.path(), &["--config", "llm.json", "--out-dir", "o", "report"]);
    assert!(stdout.contains("0 from the language model"), "{stdout}");
    let reports = report_jsons(&dir.path().join("o"));
    assert_eq!(reports.len(), 6);
    assert!(reports.iter().all(|r| r["report"]["source"] == "template"));
}

const CANNED: &str = "Classification Result:\nPD-like.\n\nConfidence:\nhigh.\n\nData Analysis:\nok.\n\n\
Interpretation:\nconsistent.\n\nRecommendations:\nrefer.\n";

/// Answers every request with the same completion until the test exits.
fn serve_forever() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut s = stream.unwrap();
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
                "choices": [{"index": 0, "message": {"role": "assistant", "content": CANNED}}],
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

#[test]
fn llm_url_flag_routes_reports_through_the_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let url = serve_forever();
    fs::write(dir.path().join("c.json"), r#"{"synth": {"n_per_class": 2}}"#).unwrap();
    let base = ["--config", "c.json", "--out-dir", "o"];
    ok(dir.path(), &[&base[..], &["gen-synthetic"]].concat());
    ok(dir.path(), &[&base[..], &["infer"]].concat());
    ok(dir.path(), &[&base[..], &["--llm-url", &url, "report"]].concat());
    let reports = report_jsons(&dir.path().join("o"));
    assert_eq!(reports.len(), 6);
    for r in &reports {
        assert_eq!(r["report"]["source"], "llm");
        assert_eq!(r["report"]["model_id"], "mock-model");
        assert_eq!(r["report"]["sections"]["recommendations"], "refer.");
    }
}

#[test]
fn exit_codes_distinguish_usage_validation_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    assert!(gaitfuse(p, &["--help"]).status.success());
    let (code, e) = failure(p, &["--no-such-flag"]);
    assert_eq!((code, e["error"].as_str()), (1, Some("usage")));
    let (code, _) = failure(p, &["frobnicate"]);
    assert_eq!(code, 1);

    fs::write(p.join("bad.json"), r#"{"embed_dim": 0, "reduction": 3}"#).unwrap();
    let (code, e) = failure(p, &["--config", "bad.json", "gen-synthetic"]);
    assert_eq!((code, e["error"].as_str()), (2, Some("validation")));
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("embed_dim") && msg.contains("reduction"), "{msg}");

    fs::write(p.join("typo.json"), r#"{"seeed": 1}"#).unwrap();
    assert_eq!(failure(p, &["--config", "typo.json", "gen-synthetic"]).0, 2);
    assert_eq!(failure(p, &["--llm-url", "not a url", "gen-synthetic"]).0, 2);

    fs::create_dir(p.join("empty")).unwrap();
    assert_eq!(failure(p, &["--out-dir", "o", "infer", "--features", "empty"]).0, 2);

    let (code, e) = failure(p, &["--out-dir", "o", "report", "--predictions", "missing.json"]);
    assert_eq!((code, e["error"].as_str()), (3, Some("runtime")));
}

#[test]
fn checkpoint_with_other_dims_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let base = ["--config", cfg.as_str(), "--out-dir", "o"];
    ok(dir.path(), &[&base[..], &["gen-synthetic"]].concat());
    ok(dir.path(), &[&base[..], &["train"]].concat());
    fs::write(dir.path().join("wide.json"), r#"{"embed_dim": 64}"#).unwrap();
    let (code, _) = failure(dir.path(), &["--config", "wide.json", "--out-dir", "o", "infer"]);
    assert_eq!(code, 2);
}

#[test]
fn selftest_passes_on_a_small_budget() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["selftest", "--instances", "3", "--points", "2"]);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() > 5, "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn preprocess_aligns_raw_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("raw/walk01");
    fs::create_dir_all(seq.join("rgb")).unwrap();
    fs::create_dir_all(seq.join("depth")).unwrap();
    for i in 0..2 {
        let rgb = gaitfuse_tensor(&[48, 64, 3], |k| (k % 251) as f32);
        let depth = gaitfuse_tensor(&[48, 64], |k| 500.0 + (k % 97) as f32);
        fs::write(seq.join(format!("rgb/{i:06}.gft")), rgb).unwrap();
        fs::write(seq.join(format!("depth/{i:06}.gft")), depth).unwrap();
    }
    fs::write(
        seq.join("meta.json"),
        r#"{"subject_id": "walk01", "symptoms": ["short_stride"],
            "capture": {"lighting": "normal", "occlusion": "none"}, "frame_index": 0}"#,
    )
    .unwrap();
    let stdout = ok(dir.path(), &["--out-dir", "o", "preprocess", "--input", "raw"]);
    assert!(stdout.contains("aligned 2 frames"), "{stdout}");
    let out = tree(&dir.path().join("o/aligned/walk01"));
    assert_eq!(
        out.keys().filter(|p| p.extension().is_some_and(|e| e == "gft")).count(),
        4
    );
    assert!(out.contains_key(Path::new("meta.json")));
}

/// Encodes a GFT file by hand so the test does not share the writer under test.
fn gaitfuse_tensor(shape: &[usize], f: impl Fn(usize) -> f32) -> Vec<u8> {
    let mut out = b"GFT1".to_vec();
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u32).to_le_bytes());
    }
    for k in 0..shape.iter().product() {
        out.extend(f(k).to_le_bytes());
    }
    out
}
