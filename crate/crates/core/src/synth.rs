//! Class-conditioned synthetic feature pyramids.
//!
//! Each class owns a band of channels and a Gaussian bump; a sample is that
//! bump on its band plus i.i.d. Gaussian noise, drawn independently for the
//! RGB and depth branches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{GaitClass, NUM_CLASSES};
use crate::model::{FeatureSample, LabeledSample, PyramidDims};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    /// Row and column of the peak as fractions of the map extent.
    pub center: [f64; 2],
    pub amplitude: f64,
    /// Standard deviation as a fraction of the map extent.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: PyramidDims,
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Indexed by class: PD-like, normal, background.
    pub class_signal: [BlobSpec; NUM_CLASSES],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: PyramidDims::REDUCED,
            n_per_class: 300,
            noise_sigma: 0.3,
            seed: 0,
            class_signal: [
                BlobSpec {
                    center: [0.35, 0.35],
                    amplitude: 1.0,
                    width: 0.2,
                },
                BlobSpec {
                    center: [0.5, 0.65],
                    amplitude: 1.5,
                    width: 0.2,
                },
                BlobSpec {
                    center: [0.65, 0.4],
                    amplitude: 0.5,
                    width: 0.2,
                },
            ],
        }
    }
}

impl SynthConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            v.push(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        for (i, a) in self.class_signal.iter().enumerate() {
            for b in &self.class_signal[i + 1..] {
                if a.amplitude == b.amplitude {
                    v.push(format!("class amplitudes must be distinct, {} repeats", a.amplitude));
                }
            }
            if !(a.width.is_finite() && a.width > 0.0) {
                v.push(format!("class_signal[{i}].width must be positive, got {}", a.width));
            }
            if !a.amplitude.is_finite() || a.center.iter().any(|c| !c.is_finite()) {
                v.push(format!("class_signal[{i}] must be finite"));
            }
        }
        for (name, [h, w, c]) in [("f4", self.dims.f4), ("f5", self.dims.f5)] {
            if h == 0 || w == 0 || c < NUM_CLASSES {
                v.push(format!(
                    "{name} dims {h}x{w}x{c}: need non-empty maps with at least {NUM_CLASSES} channels"
                ));
            }
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

/// Channel range carrying class `k`'s signal in a map with `c` channels.
pub fn channel_band(k: usize, c: usize) -> std::ops::Range<usize> {
    let width = c / NUM_CLASSES;
    k * width..(k + 1) * width
}

/// Noise-free class template for one `[h, w, c]` map.
pub fn class_template(shape: [usize; 3], label: GaitClass, blob: &BlobSpec) -> Tensor<f32> {
    let [h, w, c] = shape;
    let band = channel_band(label.index(), c);
    let bump = |r: usize, col: usize| {
        let dy = (r as f64 + 0.5) / h as f64 - blob.center[0];
        let dx = (col as f64 + 0.5) / w as f64 - blob.center[1];
        blob.amplitude * (-(dy * dy + dx * dx) / (2.0 * blob.width * blob.width)).exp()
    };
    Tensor::from_fn(&shape, |i| {
        let ch = i % c;
        if band.contains(&ch) {
            let px = i / c;
            bump(px / w, px % w) as f32
        } else {
            0.0
        }
    })
    .expect("non-empty shape")
}

fn noisy(template: &Tensor<f32>, noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    match noise {
        None => template.clone(),
        Some(n) => {
            let data = template
                .data()
                .iter()
                .map(|&v| (f64::from(v) + n.sample(rng)) as f32)
                .collect();
            Tensor::new(template.shape(), data).expect("same shape")
        }
    }
}

/// Sample `index` of the dataset; its label is `index % 3`.
pub fn gen_sample(cfg: &SynthConfig, index: usize) -> LabeledSample<f32> {
    let label = GaitClass::from_index(index % NUM_CLASSES).expect("three classes");
    let blob = &cfg.class_signal[label.index()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"));
    let t4 = class_template(cfg.dims.f4, label, blob);
    let t5 = class_template(cfg.dims.f5, label, blob);
    let features = FeatureSample {
        f4_rgb: noisy(&t4, noise.as_ref(), &mut rng),
        f4_d: noisy(&t4, noise.as_ref(), &mut rng),
        f5_rgb: noisy(&t5, noise.as_ref(), &mut rng),
        f5_d: noisy(&t5, noise.as_ref(), &mut rng),
    };
    LabeledSample { features, label }
}

/// `3 * n_per_class` samples with labels cycling through the classes.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<LabeledSample<f32>>> {
    cfg.validate()?;
    Ok((0..cfg.n_per_class * NUM_CLASSES)
        .into_par_iter()
        .map(|i| gen_sample(cfg, i))
        .collect())
}

/// Per class, the first `round(train_fraction * n)` samples (in input order)
/// go to the training split. Returns indices into `samples`.
pub fn stratified_split<T: crate::tensor::Scalar>(
    samples: &[LabeledSample<T>],
    train_fraction: f64,
) -> (Vec<usize>, Vec<usize>) {
    let counts = crate::train::class_counts(samples);
    let quota = counts.map(|n| (train_fraction * n as f64).round() as usize);
    let mut seen = [0usize; NUM_CLASSES];
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        let k = s.label.index();
        if seen[k] < quota[k] {
            train.push(i);
        } else {
            val.push(i);
        }
        seen[k] += 1;
    }
    (train, val)
}

/// Convenience split of an owned dataset into (train, validation).
pub fn split_dataset(
    samples: Vec<LabeledSample<f32>>,
    train_fraction: f64,
) -> (Vec<LabeledSample<f32>>, Vec<LabeledSample<f32>>) {
    let (train_idx, _) = stratified_split(&samples, train_fraction);
    let mut is_train = vec![false; samples.len()];
    for i in train_idx {
        is_train[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, t) in samples.into_iter().zip(is_train) {
        if t {
            train.push(s);
        } else {
            val.push(s);
        }
    }
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::probe;

    fn small(sigma: f64, n: usize) -> SynthConfig {
        SynthConfig {
            n_per_class: n,
            noise_sigma: sigma,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = gen_dataset(&small(0.3, 4)).unwrap();
        let b = gen_dataset(&small(0.3, 4)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.features.f4_rgb.bit_eq(&y.features.f4_rgb));
            assert!(x.features.f5_d.bit_eq(&y.features.f5_d));
            assert_eq!(x.label, y.label);
        }
        let c = gen_dataset(&SynthConfig {
            seed: 43,
            ..small(0.3, 4)
        })
        .unwrap();
        assert!(!a[0].features.f4_rgb.bit_eq(&c[0].features.f4_rgb));
    }

    #[test]
    fn rgb_and_depth_noise_are_independent() {
        let s = gen_sample(&small(0.3, 1), 0);
        assert!(!s.features.f4_rgb.bit_eq(&s.features.f4_d));
    }

    #[test]
    fn noiseless_classes_are_constant_and_separable() {
        let data = gen_dataset(&small(0.0, 3)).unwrap();
        for s in &data[3..] {
            let first = &data[s.label.index()];
            assert!(s.features.f4_rgb.bit_eq(&first.features.f4_rgb));
            assert!(s.features.f5_d.bit_eq(&first.features.f5_d));
        }
        assert_eq!(probe::nearest_centroid_accuracy(&data, &data), 1.0);
    }

    #[test]
    fn default_config_is_linearly_separable() {
        let data = gen_dataset(&SynthConfig::default()).unwrap();
        let (train, val) = stratified_split(&data, 0.8);
        let acc = probe::linear_probe_accuracy(&data, &train, &val);
        assert!(acc >= 0.9, "probe accuracy {acc}");
    }

    #[test]
    fn separability_falls_with_noise() {
        let accs: Vec<f64> = [0.3, 4.0, 12.0]
            .iter()
            .map(|&sigma| {
                let data = gen_dataset(&small(sigma, 150)).unwrap();
                let (train, val) = stratified_split(&data, 0.8);
                probe::linear_probe_accuracy(&data, &train, &val)
            })
            .collect();
        assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
        assert!(accs[2] < accs[0], "{accs:?}");
    }

    #[test]
    fn separability_grows_with_amplitude_gap() {
        let accs: Vec<f64> = [0.05, 0.3, 1.0]
            .iter()
            .map(|&scale| {
                let mut cfg = small(3.0, 150);
                for b in &mut cfg.class_signal {
                    b.amplitude *= scale;
                }
                let data = gen_dataset(&cfg).unwrap();
                let (train, val) = stratified_split(&data, 0.8);
                probe::linear_probe_accuracy(&data, &train, &val)
            })
            .collect();
        assert!(accs[0] <= accs[1] && accs[1] <= accs[2], "{accs:?}");
        assert!(accs[0] < accs[2], "{accs:?}");
    }

    #[test]
    fn split_is_stratified() {
        let data = gen_dataset(&small(0.3, 10)).unwrap();
        let (train, val) = stratified_split(&data, 0.8);
        assert_eq!((train.len(), val.len()), (24, 6));
        let val_labels: Vec<_> = val.iter().map(|&i| data[i].label.index()).collect();
        assert_eq!(val_labels.iter().filter(|&&k| k == 2).count(), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.class_signal[1].amplitude = cfg.class_signal[0].amplitude;
        cfg.noise_sigma = -1.0;
        assert_eq!(cfg.violations().len(), 2);
    }
}
