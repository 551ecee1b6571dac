use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gaitfuse_core::model::forward;
use gaitfuse_core::preprocess::{align_pair, PreprocessConfig};
use gaitfuse_core::synth::gen_sample;
use gaitfuse_core::train::fusion_loss;
use gaitfuse_core::{FusionParams, ModelConfig, PyramidDims, RawFramePair, SynthConfig, Tensor};

fn setup(dims: PyramidDims, n: usize) -> (FusionParams, Vec<gaitfuse_core::LabeledSample<f32>>) {
    let params = FusionParams::init(ModelConfig::new(dims), 0).unwrap();
    let synth = SynthConfig {
        dims,
        ..SynthConfig::default()
    };
    (params, (0..n).map(|i| gen_sample(&synth, i)).collect())
}

fn forward_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    let (p, s) = setup(PyramidDims::REDUCED, 1);
    g.bench_function("reduced", |b| {
        b.iter(|| forward(black_box(&s[0].features), &p).unwrap())
    });
    g.sample_size(10).measurement_time(Duration::from_secs(30));
    let (p, s) = setup(PyramidDims::STANDARD, 1);
    g.bench_function("standard", |b| {
        b.iter(|| forward(black_box(&s[0].features), &p).unwrap())
    });
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let (p, batch) = setup(PyramidDims::REDUCED, 16);
    c.bench_function("loss_and_gradients/reduced_batch16", |b| {
        b.iter(|| fusion_loss(black_box(&batch), &p, 1e-3).unwrap())
    });
}

fn preprocessing(c: &mut Criterion) {
    let (h, w) = (480, 640);
    let rgb = Tensor::from_fn(&[h, w, 3], |i| (i % 256) as f32).unwrap();
    let depth_m = Tensor::from_fn(&[h, w, 1], |i| 0.5 + (i % 400) as f32 * 0.01).unwrap();
    let cfg = PreprocessConfig::default();
    c.bench_function("align_pair/480x640", |b| {
        b.iter_batched(
            || RawFramePair {
                rgb: rgb.clone(),
                depth_m: depth_m.clone(),
                timestamp_us: 0,
                subject_region: None,
            },
            |pair| align_pair(black_box(&pair), &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, forward_pass, training_step, preprocessing);
criterion_main!(benches);
