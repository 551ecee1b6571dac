//! Activation heatmaps: channel-mean maps written as binary PGM plus CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::FusionOutputs;
use crate::preprocess::DEGENERATE_RANGE;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major channel means before quantization.
    pub raw: Vec<f64>,
    /// Row-major 8-bit levels.
    pub pixels: Vec<u8>,
}

/// Mean over channels, min-max scaled to `0..=255` (all zeros when the map
/// is flat).
pub fn heatmap<T: Scalar>(f: &Tensor<T>) -> Result<Heatmap> {
    let (h, w, c) = f.dims3("heatmap")?;
    let raw: Vec<f64> = f
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / c as f64)
        .collect();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap input".into()));
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = raw
        .iter()
        .map(|&v| {
            if range < DEGENERATE_RANGE {
                0
            } else {
                (255.0 * ((v - lo) / range)).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    Ok(Heatmap {
        height: h,
        width: w,
        raw,
        pixels,
    })
}

fn pgm_header(width: usize, height: usize) -> String {
    format!("P5\n{width} {height}\n255\n")
}

pub fn encode_pgm(m: &Heatmap) -> Vec<u8> {
    let mut out = pgm_header(m.width, m.height).into_bytes();
    out.extend_from_slice(&m.pixels);
    out
}

/// Parses the binary PGM subset written by [`encode_pgm`] (single
/// whitespace separators, maxval 255, no comments).
pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let fail = |msg: &str| Error::Format {
        path: origin.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(fail("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fail("non-ASCII PGM header"))?);
        pos += 1;
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(fail("expected P5 with maxval 255"));
    }
    let width: usize = fields[1].parse().map_err(|_| fail("bad PGM width"))?;
    let height: usize = fields[2].parse().map_err(|_| fail("bad PGM height"))?;
    let body = &bytes[pos..];
    if body.len() != width * height {
        return Err(fail("PGM pixel count does not match header"));
    }
    Ok((width, height, body.to_vec()))
}

pub fn encode_csv(m: &Heatmap) -> String {
    let mut s = String::new();
    for row in m.raw.chunks_exact(m.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Writes `path` (PGM) and the same path with a `.csv` extension; returns
/// the CSV path.
pub fn export_heatmap<T: Scalar>(f: &Tensor<T>, path: &Path) -> Result<PathBuf> {
    let m = heatmap(f)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_pgm(&m))?;
    let csv = path.with_extension("csv");
    fs::write(&csv, encode_csv(&m))?;
    Ok(csv)
}

/// Named intermediates worth visualizing from one forward pass.
pub fn named_maps<T: Scalar>(o: &FusionOutputs<T>) -> Vec<(&'static str, &Tensor<T>)> {
    vec![
        ("f4_t", &o.mlge.local.f4_t),
        ("f4_conv", &o.mlge.local.f4_conv),
        ("f4_rgbd", &o.mlge.local.f4_rgbd),
        ("f5_t", &o.mlge.global.f5_t),
        ("f5_rgbd", &o.mlge.global.f5_rgbd),
        ("neck_attention", &o.neck.attention),
        ("f40", &o.neck.f40),
        ("f20", &o.neck.f20),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::random_tensor;
    use rand::SeedableRng;

    #[test]
    fn constant_map_is_black() {
        let m = heatmap(&Tensor::<f32>::full(&[3, 4, 2], 0.7).unwrap()).unwrap();
        assert!(m.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn hot_pixel_is_white() {
        let mut data = vec![0.0f32; 5 * 5 * 3];
        data[(2 * 5 + 3) * 3 + 1] = 4.0;
        let m = heatmap(&Tensor::new(&[5, 5, 3], data).unwrap()).unwrap();
        for (i, &p) in m.pixels.iter().enumerate() {
            assert_eq!(p, if i == 2 * 5 + 3 { 255 } else { 0 });
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f32> = random_tensor(&mut rng, &[7, 9, 4], -2.0, 2.0);
        let path = dir.path().join("maps/f4.pgm");
        let csv = export_heatmap(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), "P5\n9 7\n255\n".len() + 7 * 9);
        let (w, h, px) = decode_pgm(&bytes, &path).unwrap();
        let m = heatmap(&t).unwrap();
        assert_eq!((w, h), (9, 7));
        assert_eq!(px, m.pixels);
        assert!(px.contains(&0) && px.contains(&255));
        let text = fs::read_to_string(csv).unwrap();
        let values: Vec<f64> = text
            .lines()
            .flat_map(|l| l.split(','))
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(values, m.raw);
    }
}
