//! Classifier oracles on pooled features, independent of the model code.

use crate::head::NUM_CLASSES;
use crate::model::LabeledSample;
use crate::tensor::Scalar;

/// Per-channel means of all four maps, concatenated.
pub fn pooled_features<T: Scalar>(s: &LabeledSample<T>) -> Vec<f64> {
    let f = &s.features;
    let mut out = Vec::new();
    for t in [&f.f4_rgb, &f.f4_d, &f.f5_rgb, &f.f5_d] {
        let c = t.shape()[2];
        let mut sums = vec![0.0; c];
        for (i, v) in t.data().iter().enumerate() {
            sums[i % c] += v.to_f64_lossy();
        }
        let n = (t.len() / c) as f64;
        out.extend(sums.into_iter().map(|s| s / n));
    }
    out
}

fn centroids(feats: &[(Vec<f64>, usize)]) -> Vec<Vec<f64>> {
    let dim = feats.first().map_or(0, |f| f.0.len());
    let mut sums = vec![vec![0.0; dim]; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (x, k) in feats {
        counts[*k] += 1;
        for (s, v) in sums[*k].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    sums
}

fn labeled<T: Scalar>(samples: &[LabeledSample<T>]) -> Vec<(Vec<f64>, usize)> {
    samples.iter().map(|s| (pooled_features(s), s.label.index())).collect()
}

/// Accuracy on `test` of assigning each sample to the nearest class centroid
/// of `train` (squared Euclidean distance on pooled features).
pub fn nearest_centroid_accuracy<T: Scalar>(train: &[LabeledSample<T>], test: &[LabeledSample<T>]) -> f64 {
    let c = centroids(&labeled(train));
    let test = labeled(test);
    let correct = test
        .iter()
        .filter(|(x, k)| {
            let closeness: Vec<f64> = c
                .iter()
                .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect();
            crate::ops::argmax(&closeness) == *k
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}

const PROBE_STEPS: usize = 400;
const PROBE_LR: f64 = 0.5;

/// Multinomial logistic regression on standardized pooled features, trained
/// by full-batch gradient descent on `train` indices and scored on `val`.
pub fn linear_probe_accuracy<T: Scalar>(data: &[LabeledSample<T>], train: &[usize], val: &[usize]) -> f64 {
    let all = labeled(data);
    let dim = all.first().map_or(0, |f| f.0.len());
    let n = train.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(&all[i].0) {
            *m += v / n;
        }
    }
    for &i in train {
        for ((s, v), m) in sd.iter_mut().zip(&all[i].0).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| v.sqrt().max(1e-12)).collect();
    let z = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect() };
    let xs: Vec<(Vec<f64>, usize)> = train.iter().map(|&i| (z(&all[i].0), all[i].1)).collect();

    let mut w = vec![vec![0.0; dim]; NUM_CLASSES];
    let mut b = [0.0; NUM_CLASSES];
    let logits = |w: &[Vec<f64>], b: &[f64; NUM_CLASSES], x: &[f64]| -> [f64; NUM_CLASSES] {
        std::array::from_fn(|k| b[k] + w[k].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
    };
    for _ in 0..PROBE_STEPS {
        let mut gw = vec![vec![0.0; dim]; NUM_CLASSES];
        let mut gb = [0.0; NUM_CLASSES];
        for (x, y) in &xs {
            let l = logits(&w, &b, x);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = l.map(|v| (v - m).exp());
            let sum: f64 = e.iter().sum();
            for k in 0..NUM_CLASSES {
                let d = e[k] / sum - f64::from(u8::from(k == *y));
                gb[k] += d / n;
                for (g, v) in gw[k].iter_mut().zip(x) {
                    *g += d * v / n;
                }
            }
        }
        for k in 0..NUM_CLASSES {
            b[k] -= PROBE_LR * gb[k];
            for (wv, g) in w[k].iter_mut().zip(&gw[k]) {
                *wv -= PROBE_LR * g;
            }
        }
    }
    let correct = val
        .iter()
        .filter(|&&i| {
            let l = logits(&w, &b, &z(&all[i].0));
            crate::ops::argmax(&l) == all[i].1
        })
        .count();
    correct as f64 / val.len().max(1) as f64
}
