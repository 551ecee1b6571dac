//! On-disk dataset layouts.
//!
//! Raw capture: `<seq>/rgb/%06d.gft`, `<seq>/depth/%06d.gft`, `<seq>/meta.json`,
//! optional `<seq>/regions.json` and `<seq>/timestamps.json` (both keyed by
//! frame index). Aligned output replaces `depth/` with `disparity/`.
//! Features: `<seq>/{f4_rgb,f4_d,f5_rgb,f5_d}/%06d.gft` with `labels.json` at
//! the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::GaitClass;
use crate::model::{FeatureSample, LabeledSample};
use crate::preprocess::{AlignedFramePair, RawFramePair, Region};
use crate::report::{GaitMetadata, Symptom};
use crate::synth::{gen_dataset, stratified_split, SynthConfig};
use crate::tensor::{read_gft, write_gft, Tensor};

pub const META_FILE: &str = "meta.json";
pub const REGIONS_FILE: &str = "regions.json";
pub const TIMESTAMPS_FILE: &str = "timestamps.json";
pub const LABELS_FILE: &str = "labels.json";
pub const FEATURE_DIRS: [&str; 4] = ["f4_rgb", "f4_d", "f5_rgb", "f5_d"];

pub fn frame_file(index: usize) -> String {
    format!("{index:06}.gft")
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Sorted frame indices of the `%06d.gft` files in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| format_err(dir, e.to_string()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".gft") {
            let idx = stem
                .parse()
                .map_err(|_| format_err(dir, format!("frame file {name:?} is not named %06d.gft")))?;
            out.push(idx);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Sorted names of the subdirectories of `root` that contain `marker`.
pub fn list_sequences(root: &Path, marker: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| format_err(root, e.to_string()))? {
        let entry = entry?;
        if entry.path().join(marker).is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_meta(seq_dir: &Path) -> Result<GaitMetadata> {
    let path = seq_dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| format_err(&path, e.to_string()))?;
    GaitMetadata::from_json(&text).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))
}

fn read_keyed<T: serde::de::DeserializeOwned>(path: &Path) -> Result<BTreeMap<usize, T>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let raw: BTreeMap<String, T> = read_json(path)?;
    raw.into_iter()
        .map(|(k, v)| {
            let idx = k
                .parse()
                .map_err(|_| format_err(path, format!("key {k:?} is not a frame index")))?;
            Ok((idx, v))
        })
        .collect()
}

/// Depth may be stored as `H x W` or `H x W x 1`.
fn as_depth_map(t: Tensor, path: &Path) -> Result<Tensor> {
    match *t.shape() {
        [h, w] => t.reshape(&[h, w, 1]),
        [_, _, 1] => Ok(t),
        _ => Err(format_err(
            path,
            format!("depth must be HxW or HxWx1, got {:?}", t.shape()),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct RawSequence {
    pub name: String,
    pub frames: Vec<usize>,
    pub pairs: Vec<RawFramePair>,
    pub meta: GaitMetadata,
}

/// Loads one raw sequence. Without `timestamps.json` the frame index stands
/// in for the timestamp.
pub fn read_raw_sequence(seq_dir: &Path) -> Result<RawSequence> {
    let frames = list_frames(&seq_dir.join("rgb"))?;
    let depth_frames = list_frames(&seq_dir.join("depth"))?;
    if frames != depth_frames {
        return Err(Error::Dataset(format!(
            "{}: rgb and depth frame sets differ",
            seq_dir.display()
        )));
    }
    let regions: BTreeMap<usize, Region> = read_keyed(&seq_dir.join(REGIONS_FILE))?;
    let stamps: BTreeMap<usize, u64> = read_keyed(&seq_dir.join(TIMESTAMPS_FILE))?;
    let mut pairs = Vec::with_capacity(frames.len());
    for &f in &frames {
        let rgb = read_gft(seq_dir.join("rgb").join(frame_file(f)))?;
        let depth_path = seq_dir.join("depth").join(frame_file(f));
        let depth_m = as_depth_map(read_gft(&depth_path)?, &depth_path)?;
        pairs.push(RawFramePair {
            rgb,
            depth_m,
            timestamp_us: stamps.get(&f).copied().unwrap_or(f as u64),
            subject_region: regions.get(&f).copied(),
        });
    }
    Ok(RawSequence {
        name: seq_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        frames,
        pairs,
        meta: read_meta(seq_dir)?,
    })
}

pub fn write_aligned_sequence(
    seq_dir: &Path,
    frames: &[usize],
    aligned: &[AlignedFramePair],
    meta: &GaitMetadata,
) -> Result<()> {
    for (&f, a) in frames.iter().zip(aligned) {
        write_gft(seq_dir.join("rgb").join(frame_file(f)), &a.rgb)?;
        write_gft(seq_dir.join("disparity").join(frame_file(f)), &a.disparity)?;
    }
    write_json(&seq_dir.join(META_FILE), meta)
}

pub fn write_features(seq_dir: &Path, frame: usize, s: &FeatureSample) -> Result<()> {
    for (dir, t) in FEATURE_DIRS.iter().zip([&s.f4_rgb, &s.f4_d, &s.f5_rgb, &s.f5_d]) {
        write_gft(seq_dir.join(dir).join(frame_file(frame)), t)?;
    }
    Ok(())
}

pub fn read_features(seq_dir: &Path, frame: usize) -> Result<FeatureSample> {
    let [f4_rgb, f4_d, f5_rgb, f5_d] = FEATURE_DIRS.map(|d| read_gft(seq_dir.join(d).join(frame_file(frame))));
    Ok(FeatureSample {
        f4_rgb: f4_rgb?,
        f4_d: f4_d?,
        f5_rgb: f5_rgb?,
        f5_d: f5_d?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub sequence: String,
    pub frame: usize,
    pub label: GaitClass,
    pub split: Split,
}

pub fn read_labels(root: &Path) -> Result<Vec<LabelEntry>> {
    read_json(&root.join(LABELS_FILE))
}

/// Loads every labeled sample under `root`, split by `labels.json`.
pub fn load_labeled(root: &Path) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for e in read_labels(root)? {
        let s = LabeledSample {
            features: read_features(&root.join(&e.sequence), e.frame)?,
            label: e.label,
        };
        match e.split {
            Split::Train => train.push(s),
            Split::Val => val.push(s),
        }
    }
    Ok((train, val))
}

/// Every `(sequence, frame)` in the feature layout under `root`, sorted.
pub fn feature_frames(root: &Path) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for seq in list_sequences(root, FEATURE_DIRS[0])? {
        for f in list_frames(&root.join(&seq).join(FEATURE_DIRS[0]))? {
            out.push((seq.clone(), f));
        }
    }
    Ok(out)
}

/// Fraction of samples routed to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

fn synthetic_meta(sequence: &str, label: GaitClass) -> GaitMetadata {
    let symptoms = match label {
        GaitClass::PdLike => vec![Symptom::ReducedArmSwing, Symptom::ShortStride],
        GaitClass::Normal | GaitClass::Background => vec![Symptom::NoneReported],
    };
    GaitMetadata::new(sequence, symptoms, 0).expect("valid symptom set")
}

/// Generates the synthetic dataset and writes it in the feature layout, one
/// sequence per (split, class), e.g. `train_pd_like`. Returns the labels.
pub fn write_synthetic(root: &Path, cfg: &SynthConfig) -> Result<Vec<LabelEntry>> {
    let data = gen_dataset(cfg)?;
    let (train_idx, _) = stratified_split(&data, TRAIN_FRACTION);
    let mut is_train = vec![false; data.len()];
    for i in train_idx {
        is_train[i] = true;
    }
    let mut next_frame: BTreeMap<String, usize> = BTreeMap::new();
    let mut labels = Vec::with_capacity(data.len());
    for (s, train) in data.iter().zip(is_train) {
        let split = if train { Split::Train } else { Split::Val };
        let class = serde_json::to_value(s.label)?;
        let sequence = format!(
            "{}_{}",
            if train { "train" } else { "val" },
            class.as_str().expect("class serializes to a string")
        );
        let frame = next_frame.entry(sequence.clone()).or_insert(0);
        let seq_dir = root.join(&sequence);
        if *frame == 0 {
            write_json(&seq_dir.join(META_FILE), &synthetic_meta(&sequence, s.label))?;
        }
        write_features(&seq_dir, *frame, &s.features)?;
        labels.push(LabelEntry {
            sequence,
            frame: *frame,
            label: s.label,
            split,
        });
        *frame += 1;
    }
    write_json(&root.join(LABELS_FILE), &labels)?;
    Ok(labels)
}

/// Path of a per-frame output file `<root>/<seq>/%06d.<ext>`.
pub fn frame_output(root: &Path, sequence: &str, frame: usize, ext: &str) -> PathBuf {
    root.join(sequence).join(format!("{frame:06}.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PyramidDims;

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_per_class: 5,
            seed: 9,
            ..Default::default()
        };
        let labels = write_synthetic(dir.path(), &cfg).unwrap();
        assert_eq!(labels.len(), 15);
        assert_eq!(read_labels(dir.path()).unwrap(), labels);
        let (train, val) = load_labeled(dir.path()).unwrap();
        assert_eq!((train.len(), val.len()), (12, 3));
        let direct = gen_dataset(&cfg).unwrap();
        assert!(train[0].features.f4_rgb.bit_eq(&direct[0].features.f4_rgb));
        train[0].features.check_dims(&PyramidDims::REDUCED).unwrap();
        let meta = read_meta(&dir.path().join("train_pd_like")).unwrap();
        assert!(meta.symptoms.contains(&Symptom::ShortStride));
        let frames = feature_frames(dir.path()).unwrap();
        assert_eq!(frames.len(), 15);
        assert_eq!(frames[0], ("train_background".to_string(), 0));
    }

    #[test]
    fn raw_sequence_with_regions_and_rank2_depth() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("walk01");
        for f in [0, 1] {
            write_gft(
                seq.join("rgb").join(frame_file(f)),
                &Tensor::full(&[4, 6, 3], 100.0).unwrap(),
            )
            .unwrap();
            write_gft(
                seq.join("depth").join(frame_file(f)),
                &Tensor::full(&[4, 6], 2.0).unwrap(),
            )
            .unwrap();
        }
        write_json(
            &seq.join(META_FILE),
            &GaitMetadata::new("p1", [Symptom::Freezing], 0).unwrap(),
        )
        .unwrap();
        fs::write(seq.join(REGIONS_FILE), r#"{"1": {"x": 0, "y": 0, "w": 3, "h": 4}}"#).unwrap();
        fs::write(seq.join(TIMESTAMPS_FILE), r#"{"0": 1000, "1": 34000}"#).unwrap();
        let raw = read_raw_sequence(&seq).unwrap();
        assert_eq!(raw.frames, [0, 1]);
        assert_eq!(raw.pairs[0].depth_m.shape(), &[4, 6, 1]);
        assert_eq!(raw.pairs[1].subject_region, Some(Region { x: 0, y: 0, w: 3, h: 4 }));
        assert_eq!(raw.pairs[1].timestamp_us, 34000);
        assert_eq!(raw.pairs[0].subject_region, None);
    }

    #[test]
    fn mismatched_modalities_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("s");
        write_gft(
            seq.join("rgb").join(frame_file(0)),
            &Tensor::full(&[2, 2, 3], 1.0).unwrap(),
        )
        .unwrap();
        fs::create_dir_all(seq.join("depth")).unwrap();
        assert!(matches!(read_raw_sequence(&seq), Err(Error::Dataset(_))));
    }

    #[test]
    fn bad_meta_is_a_metadata_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(META_FILE),
            r#"{"subject_id":"a","symptoms":[],"capture":{"lighting":"low","occlusion":"none"},"frame_index":0}"#,
        )
        .unwrap();
        assert!(matches!(read_meta(dir.path()), Err(Error::Metadata(_))));
    }
}
