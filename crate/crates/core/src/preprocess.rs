//! Depth-to-disparity conversion, normalization and subject-region alignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MIN_DEPTH_M: f64 = 0.1;
pub const DEFAULT_INPUT_SIZE: usize = 640;
/// Disparity ranges narrower than this normalize to all zeros.
pub const DEGENERATE_RANGE: f64 = 1e-9;

/// Axis-aligned box in pixels, shared by both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::RegionOutOfBounds {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFramePair {
    /// `H x W x 3`, values in `[0, 255]`.
    pub rgb: Tensor,
    /// `H x W x 1`, meters.
    pub depth_m: Tensor,
    pub timestamp_us: u64,
    pub subject_region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFramePair {
    pub rgb: Tensor,
    pub disparity: Tensor,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    Frame,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_depth_m: f64,
    pub size: usize,
    pub scope: NormScope,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_depth_m: DEFAULT_MIN_DEPTH_M,
            size: DEFAULT_INPUT_SIZE,
            scope: NormScope::Frame,
        }
    }
}

impl PreprocessConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.min_depth_m.is_finite() && self.min_depth_m >= 0.0) {
            v.push("preprocess.min_depth_m must be finite and non-negative".into());
        }
        if self.size == 0 {
            v.push("preprocess.size must be positive".into());
        }
        v
    }
}

/// Element-wise reciprocal. Fails on the first pixel at or below
/// `min_depth_m` (sensor dropout), including NaN.
pub fn depth_to_disparity(depth_m: &Tensor, min_depth_m: f64) -> Result<Tensor> {
    // compare at storage precision so a depth of exactly the threshold is rejected
    let min = min_depth_m as f32;
    if let Some((index, &value)) = depth_m.data().iter().enumerate().find(|(_, &d)| !(d > min)) {
        return Err(Error::DepthDropout {
            index,
            value,
            min_depth_m: min,
        });
    }
    Ok(depth_m.map(|d| 1.0 / d))
}

/// Min and max over every value of every frame.
pub fn extrema<'a>(frames: impl IntoIterator<Item = &'a Tensor>) -> Result<(f32, f32)> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for f in frames {
        f.ensure_finite("disparity")?;
        let (a, b) = f.min_max();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

/// Affine map of `[lo, hi]` onto `[0, 1]`; zeros when the range is degenerate.
pub fn normalize_with_range(disp: &Tensor, lo: f32, hi: f32) -> Tensor {
    let range = f64::from(hi) - f64::from(lo);
    if !(range >= DEGENERATE_RANGE) {
        return disp.map(|_| 0.0);
    }
    disp.map(|v| ((f64::from(v) - f64::from(lo)) / range).clamp(0.0, 1.0) as f32)
}

pub fn normalize_disparity(disp: &Tensor) -> Result<Tensor> {
    let (lo, hi) = extrema([disp])?;
    Ok(normalize_with_range(disp, lo, hi))
}

/// Normalizes every frame against the pooled extrema of the whole sequence.
pub fn normalize_disparity_sequence(frames: &[Tensor]) -> Result<Vec<Tensor>> {
    let (lo, hi) = extrema(frames)?;
    Ok(frames.iter().map(|f| normalize_with_range(f, lo, hi)).collect())
}

pub fn normalize_rgb(rgb: &Tensor) -> Result<Tensor> {
    rgb.ensure_finite("rgb")?;
    if let Some(v) = rgb.data().iter().find(|&&v| !(0.0..=255.0).contains(&v)) {
        return Err(Error::invalid("normalize_rgb", format!("value {v} outside [0, 255]")));
    }
    Ok(rgb.map(|v| v / 255.0))
}

pub fn crop(t: &Tensor, r: &Region) -> Result<Tensor> {
    let (h, w, c) = t.dims3("crop")?;
    r.check(h, w)?;
    let mut out = Vec::with_capacity(r.w * r.h * c);
    for y in r.y..r.y + r.h {
        let row = (y * w + r.x) * c;
        out.extend_from_slice(&t.data()[row..row + r.w * c]);
    }
    Tensor::new(&[r.h, r.w, c], out)
}

/// Bilinear resize with corner-aligned sampling: output corners coincide
/// with input corners.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = t.dims3("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", "output extents must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let src = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let d = t.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        let (y0, y1, fy) = src(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = src(ox, out_w, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| f64::from(d[(y * w + x) * c + ch]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Crop to the subject region, convert depth, resize, and return the
/// un-normalized disparity alongside the normalized RGB.
fn register(pair: &RawFramePair, cfg: &PreprocessConfig) -> Result<(Tensor, Tensor)> {
    let (hr, wr, cr) = pair.rgb.dims3("align_pair rgb")?;
    let (hd, wd, cd) = pair.depth_m.dims3("align_pair depth")?;
    if cr != 3 {
        return Err(Error::shape("align_pair", "rgb channels", 3, cr));
    }
    if cd != 1 {
        return Err(Error::shape("align_pair", "depth channels", 1, cd));
    }
    if hr != hd {
        return Err(Error::shape("align_pair", "depth height", hr, hd));
    }
    if wr != wd {
        return Err(Error::shape("align_pair", "depth width", wr, wd));
    }
    let (rgb, depth) = match &pair.subject_region {
        Some(r) => (crop(&pair.rgb, r)?, crop(&pair.depth_m, r)?),
        None => (pair.rgb.clone(), pair.depth_m.clone()),
    };
    let disparity = depth_to_disparity(&depth, cfg.min_depth_m)?;
    let rgb = normalize_rgb(&resize_bilinear(&rgb, cfg.size, cfg.size)?)?;
    let disparity = resize_bilinear(&disparity, cfg.size, cfg.size)?;
    Ok((rgb, disparity))
}

/// Per-frame alignment with frame-scope disparity normalization.
pub fn align_pair(pair: &RawFramePair, cfg: &PreprocessConfig) -> Result<AlignedFramePair> {
    let (rgb, disparity) = register(pair, cfg)?;
    Ok(AlignedFramePair {
        rgb,
        disparity: normalize_disparity(&disparity)?,
        size: cfg.size,
    })
}

/// Aligns a whole sequence, honoring the configured normalization scope.
/// Timestamps must be non-decreasing.
pub fn align_sequence(pairs: &[RawFramePair], cfg: &PreprocessConfig) -> Result<Vec<AlignedFramePair>> {
    for (i, w) in pairs.windows(2).enumerate() {
        if w[1].timestamp_us < w[0].timestamp_us {
            return Err(Error::invalid(
                "align_sequence",
                format!("timestamp of frame {} precedes frame {i}", i + 1),
            ));
        }
    }
    let registered: Vec<(Tensor, Tensor)> = pairs.iter().map(|p| register(p, cfg)).collect::<Result<_>>()?;
    let range = match cfg.scope {
        NormScope::Frame => None,
        NormScope::Sequence => Some(extrema(registered.iter().map(|(_, d)| d))?),
    };
    registered
        .into_iter()
        .map(|(rgb, d)| {
            let disparity = match range {
                Some((lo, hi)) => normalize_with_range(&d, lo, hi),
                None => normalize_disparity(&d)?,
            };
            Ok(AlignedFramePair {
                rgb,
                disparity,
                size: cfg.size,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::verify::random_tensor;

    fn v(x: &[f32]) -> Tensor {
        Tensor::new(&[x.len(), 1, 1], x.to_vec()).unwrap()
    }

    #[test]
    fn reciprocal_examples() {
        let d = depth_to_disparity(&v(&[2.0, 1.0]), 0.1).unwrap();
        assert_eq!(d.data(), &[0.5, 1.0]);
    }

    #[test]
    fn reciprocal_matches_scalar_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let depth: Tensor = random_tensor(&mut r, &[16, 16, 1], 0.5, 5.0);
        let d = depth_to_disparity(&depth, 0.1).unwrap();
        for (&x, &y) in depth.data().iter().zip(d.data()) {
            let want = 1.0 / f64::from(x);
            assert!((f64::from(y) - want).abs() / want <= 1e-6);
        }
    }

    #[test]
    fn dropout_reports_first_pixel() {
        match depth_to_disparity(&v(&[1.0, 0.05, 0.0]), 0.1) {
            Err(Error::DepthDropout { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(depth_to_disparity(&v(&[0.1]), 0.1).is_err());
        assert!(depth_to_disparity(&v(&[f32::NAN]), 0.1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_disparity(&v(&[0.2, 0.6, 1.0])).unwrap();
        let want = [0.0, 0.5, 1.0];
        for (a, b) in n.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-7);
        }
        let c = normalize_disparity(&v(&[0.7; 5])).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sequence_scope_uses_pooled_extrema() {
        let a = v(&[0.5, 1.0]);
        let b = v(&[2.0, 1.5]);
        let out = normalize_disparity_sequence(&[a.clone(), b.clone()]).unwrap();
        let (lo, hi) = (0.5f64, 2.0f64);
        for (src, dst) in [a, b].iter().zip(&out) {
            for (&x, &y) in src.data().iter().zip(dst.data()) {
                assert!((f64::from(y) - (f64::from(x) - lo) / (hi - lo)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rgb_scaling() {
        let n = normalize_rgb(&v(&[255.0, 0.0, 128.0])).unwrap();
        assert_eq!(n.data(), &[1.0, 0.0, 128.0 / 255.0]);
        assert!(normalize_rgb(&v(&[256.0])).is_err());
    }

    fn pair(h: usize, w: usize, region: Option<Region>) -> RawFramePair {
        let mut r = ChaCha8Rng::seed_from_u64(h as u64 * 31 + w as u64);
        RawFramePair {
            rgb: random_tensor(&mut r, &[h, w, 3], 0.0, 255.0),
            depth_m: random_tensor(&mut r, &[h, w, 1], 0.5, 5.0),
            timestamp_us: 0,
            subject_region: region,
        }
    }

    #[test]
    fn identity_size_is_just_normalization() {
        let p = pair(8, 8, None);
        let cfg = PreprocessConfig {
            size: 8,
            ..Default::default()
        };
        let out = align_pair(&p, &cfg).unwrap();
        assert!(out.rgb.bit_eq(&normalize_rgb(&p.rgb).unwrap()));
        let d = normalize_disparity(&depth_to_disparity(&p.depth_m, 0.1).unwrap()).unwrap();
        assert!(out.disparity.bit_eq(&d));
        let full = align_pair(
            &RawFramePair {
                subject_region: Some(Region { x: 0, y: 0, w: 8, h: 8 }),
                ..p
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(full, out);
    }

    #[test]
    fn crop_then_mean_matches_bright_half() {
        let (h, w) = (8, 12);
        let rgb = Tensor::from_fn(&[h, w, 3], |i| if (i / 3) % w < w / 2 { 240.0 } else { 10.0 }).unwrap();
        let p = RawFramePair {
            rgb,
            depth_m: Tensor::full(&[h, w, 1], 2.0).unwrap(),
            timestamp_us: 0,
            subject_region: Some(Region {
                x: 0,
                y: 0,
                w: w / 2,
                h,
            }),
        };
        let cfg = PreprocessConfig {
            size: 16,
            ..Default::default()
        };
        let out = align_pair(&p, &cfg).unwrap();
        let mean = out.rgb.data().iter().map(|&x| f64::from(x)).sum::<f64>() / out.rgb.len() as f64;
        assert!((mean - 240.0 / 255.0).abs() < 1e-6);
        assert!(out.disparity.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn region_must_fit() {
        let p = pair(8, 8, Some(Region { x: 4, y: 0, w: 5, h: 2 }));
        assert!(matches!(
            align_pair(&p, &PreprocessConfig::default()),
            Err(Error::RegionOutOfBounds { .. })
        ));
    }

    #[test]
    fn modality_extents_must_match() {
        let mut p = pair(8, 8, None);
        p.depth_m = Tensor::full(&[8, 7, 1], 1.0).unwrap();
        let err = align_pair(&p, &PreprocessConfig::default()).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn off_center_blob_stays_off_center() {
        let (h, w, s) = (30, 40, 64);
        let (by, bx) = (10usize, 30usize);
        let rgb = Tensor::from_fn(&[h, w, 3], |i| {
            let (y, x) = (i / 3 / w, (i / 3) % w);
            if y.abs_diff(by) <= 1 && x.abs_diff(bx) <= 1 {
                255.0
            } else {
                0.0
            }
        })
        .unwrap();
        let p = RawFramePair {
            rgb,
            depth_m: Tensor::full(&[h, w, 1], 1.0).unwrap(),
            timestamp_us: 0,
            subject_region: None,
        };
        let cfg = PreprocessConfig {
            size: s,
            ..Default::default()
        };
        let out = align_pair(&p, &cfg).unwrap();
        let (mut sx, mut sum) = (0.0, 0.0);
        for (i, &v) in out.rgb.data().iter().enumerate().filter(|(i, _)| i % 3 == 0) {
            sx += ((i / 3) % s) as f64 * f64::from(v);
            sum += f64::from(v);
        }
        let before = bx as f64 / (w - 1) as f64;
        let after = sx / sum / (s - 1) as f64;
        assert!((before - after).abs() * s as f64 <= 1.0, "{before} vs {after}");
    }

    #[test]
    fn sequence_timestamps_must_not_decrease() {
        let mut a = pair(4, 4, None);
        let mut b = pair(4, 4, None);
        a.timestamp_us = 10;
        b.timestamp_us = 5;
        assert!(align_sequence(&[a, b], &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn sequence_scope_pools_over_frames() {
        let mut a = pair(4, 4, None);
        let mut b = pair(6, 6, None);
        a.timestamp_us = 1;
        b.timestamp_us = 2;
        let cfg = PreprocessConfig {
            size: 4,
            scope: NormScope::Sequence,
            ..Default::default()
        };
        let out = align_sequence(&[a, b], &cfg).unwrap();
        let zeros: usize = out
            .iter()
            .map(|f| f.disparity.data().iter().filter(|&&x| x == 0.0).count())
            .sum();
        let ones: usize = out
            .iter()
            .map(|f| f.disparity.data().iter().filter(|&&x| x == 1.0).count())
            .sum();
        assert_eq!((zeros, ones), (1, 1));
    }

    proptest! {
        #[test]
        fn normalization_is_bounded_and_monotone(values in prop::collection::vec(0.01f32..100.0, 2..64)) {
            let t = v(&values);
            let n = normalize_disparity(&t).unwrap();
            prop_assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let mut pairs: Vec<_> = values.iter().zip(n.data()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(b.0));
            prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        }

        #[test]
        fn aligned_values_stay_in_unit_range(seed in any::<u64>(), size in 1usize..12) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = RawFramePair {
                rgb: random_tensor(&mut r, &[5, 7, 3], 0.0, 255.0),
                depth_m: random_tensor(&mut r, &[5, 7, 1], 0.2, 8.0),
                timestamp_us: 0,
                subject_region: Some(Region { x: 1, y: 1, w: 5, h: 3 }),
            };
            let out = align_pair(&p, &PreprocessConfig { size, ..Default::default() }).unwrap();
            prop_assert_eq!(out.rgb.shape(), &[size, size, 3]);
            prop_assert_eq!(out.disparity.shape(), &[size, size, 1]);
            prop_assert!(out.rgb.data().iter().chain(out.disparity.data()).all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
