//! Image degradations with a single normalized severity knob.
//!
//! | kind              | parameter at severity `s`                         |
//! |-------------------|---------------------------------------------------|
//! | gaussian-blur     | σ = 4·s px, separable, edge-clamped               |
//! | gaussian-noise    | additive N(0, (0.2·s)²)                           |
//! | salt-pepper       | fraction 0.1·s of pixels forced to 0 or 1         |
//! | speckle           | x·(1 + n), n ~ N(0, (0.5·s)²)                     |
//! | fog-blend         | blend weight 0.6·s towards a smooth bright field  |
//! | brightness-shift  | +0.3·s                                            |
//! | contrast-scale    | per-channel contrast factor 1 − 0.7·s             |
//! | gamma             | x^(1 + 1.5·s)                                     |
//! | block-quantize    | 8×8 DCT, AC step 0.05·s/(1−s)·(1+u+v); DC only at s = 1 |
//! | downscale-upscale | bilinear to scale 1 − 0.5·s and back              |
//! | center-crop-pad   | border of 0.1·s of each side replaced by grey     |
//! | small-rotation    | 5·s degrees about the centre, bilinear            |
//! | median-filter     | window radius ⌈2·s⌉                               |
//! | pixelate          | block size 1 + round(6·s)                         |
//!
//! These ranges are a stand-in parameterization, not a reproduction of any
//! published attack suite.

use std::fmt;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    GaussianBlur,
    GaussianNoise,
    SaltPepper,
    Speckle,
    FogBlend,
    BrightnessShift,
    ContrastScale,
    Gamma,
    BlockQuantize,
    DownscaleUpscale,
    CenterCropPad,
    SmallRotation,
    MedianFilter,
    Pixelate,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 14] = [
        DegradationKind::GaussianBlur,
        DegradationKind::GaussianNoise,
        DegradationKind::SaltPepper,
        DegradationKind::Speckle,
        DegradationKind::FogBlend,
        DegradationKind::BrightnessShift,
        DegradationKind::ContrastScale,
        DegradationKind::Gamma,
        DegradationKind::BlockQuantize,
        DegradationKind::DownscaleUpscale,
        DegradationKind::CenterCropPad,
        DegradationKind::SmallRotation,
        DegradationKind::MedianFilter,
        DegradationKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::GaussianBlur => "gaussian-blur",
            DegradationKind::GaussianNoise => "gaussian-noise",
            DegradationKind::SaltPepper => "salt-pepper",
            DegradationKind::Speckle => "speckle",
            DegradationKind::FogBlend => "fog-blend",
            DegradationKind::BrightnessShift => "brightness-shift",
            DegradationKind::ContrastScale => "contrast-scale",
            DegradationKind::Gamma => "gamma",
            DegradationKind::BlockQuantize => "block-quantize",
            DegradationKind::DownscaleUpscale => "downscale-upscale",
            DegradationKind::CenterCropPad => "center-crop-pad",
            DegradationKind::SmallRotation => "small-rotation",
            DegradationKind::MedianFilter => "median-filter",
            DegradationKind::Pixelate => "pixelate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown degradation kind {s:?}")))
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub kind: DegradationKind,
    pub severity: f64,
}

impl Degradation {
    pub fn new(kind: DegradationKind, severity: f64) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&severity),
            InvalidArgument,
            "severity {severity} outside [0, 1]"
        );
        Ok(Degradation { kind, severity })
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.severity)
    }
}

/// Parses `kind:severity[,kind:severity...]`.
pub fn parse_spec(spec: &str) -> Result<Vec<Degradation>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, s) = part
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("degradation {part:?} is not kind:severity")))?;
        let sev: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad severity in {part:?}")))?;
        out.push(Degradation::new(DegradationKind::parse(k.trim())?, sev)?);
    }
    ensure!(!out.is_empty(), InvalidArgument, "empty degradation spec");
    Ok(out)
}

/// Applies `d` to `image`. Severity 0 returns an exact copy.
pub fn degrade(image: &Image, d: Degradation, rng: &mut dyn RngCore) -> Result<Image> {
    ensure!(
        (0.0..=1.0).contains(&d.severity),
        InvalidArgument,
        "severity {} outside [0, 1]",
        d.severity
    );
    if d.severity == 0.0 {
        return Ok(image.clone());
    }
    let s = d.severity;
    let out = match d.kind {
        DegradationKind::GaussianBlur => gaussian_blur(image, 4.0 * s),
        DegradationKind::GaussianNoise => {
            let sigma = 0.2 * s;
            map_with(image, |v| {
                let n: f64 = StandardNormal.sample(&mut *rng);
                v + sigma * n
            })
        }
        DegradationKind::SaltPepper => salt_pepper(image, 0.1 * s, rng),
        DegradationKind::Speckle => {
            let sigma = 0.5 * s;
            map_with(image, |v| {
                let n: f64 = StandardNormal.sample(&mut *rng);
                v * (1.0 + sigma * n)
            })
        }
        DegradationKind::FogBlend => fog(image, 0.6 * s, rng),
        DegradationKind::BrightnessShift => image.map(|v| v + 0.3 * s),
        DegradationKind::ContrastScale => {
            let f = 1.0 - 0.7 * s;
            let means = image.channel_means();
            let mut out = image.clone();
            for (c, m) in means.iter().enumerate() {
                for v in out.channel_mut(c) {
                    *v = m + (*v - m) * f;
                }
            }
            out
        }
        DegradationKind::Gamma => {
            let g = 1.0 + 1.5 * s;
            image.map(|v| v.clamp(0.0, 1.0).powf(g))
        }
        DegradationKind::BlockQuantize => block_quantize(image, s),
        DegradationKind::DownscaleUpscale => {
            let sh = image.shape();
            let f = 1.0 - 0.5 * s;
            let h = ((sh.height as f64 * f).round() as usize).max(1);
            let w = ((sh.width as f64 * f).round() as usize).max(1);
            image.resize_bilinear(h, w).resize_bilinear(sh.height, sh.width)
        }
        DegradationKind::CenterCropPad => crop_pad(image, 0.1 * s),
        DegradationKind::SmallRotation => rotate(image, (5.0 * s).to_radians()),
        DegradationKind::MedianFilter => median(image, (2.0 * s).ceil() as usize),
        DegradationKind::Pixelate => pixelate(image, 1 + (6.0 * s).round() as usize),
    };
    Ok(out.clipped())
}

fn map_with(image: &Image, mut f: impl FnMut(f64) -> f64) -> Image {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    let sh = image.shape();
    let (h, w) = (sh.height as isize, sh.width as isize);
    let horiz = Image::from_fn(sh, |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * image.get(c, y, (x as isize + i as isize - r).clamp(0, w - 1) as usize))
            .sum()
    });
    Image::from_fn(sh, |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * horiz.get(c, (y as isize + i as isize - r).clamp(0, h - 1) as usize, x))
            .sum()
    })
}

fn salt_pepper(image: &Image, fraction: f64, rng: &mut dyn RngCore) -> Image {
    let sh = image.shape();
    let mut out = image.clone();
    for y in 0..sh.height {
        for x in 0..sh.width {
            if rng.random::<f64>() < fraction {
                let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                for c in 0..sh.channels {
                    out.set(c, y, x, v);
                }
            }
        }
    }
    out
}

fn fog(image: &Image, weight: f64, rng: &mut dyn RngCore) -> Image {
    let sh = image.shape();
    let grid = Image::from_fn(Shape::new(4, 4, 1), |_, _, _| 0.7 + 0.3 * rng.random::<f64>());
    let field = grid.resize_bilinear(sh.height, sh.width);
    Image::from_fn(sh, |c, y, x| image.get(c, y, x) * (1.0 - weight) + weight * field.get(0, y, x))
}

/// Orthonormal DCT-II basis of size `n`: `m[k][i]`.
fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

fn block_quantize(image: &Image, s: f64) -> Image {
    const B: usize = 8;
    let sh = image.shape();
    let base_step = if s >= 1.0 { f64::INFINITY } else { 0.05 * s / (1.0 - s) };
    let mut out = image.clone();
    for c in 0..sh.channels {
        for by in (0..sh.height).step_by(B) {
            for bx in (0..sh.width).step_by(B) {
                let (bh, bw) = (B.min(sh.height - by), B.min(sh.width - bx));
                let (my, mx) = (dct_matrix(bh), dct_matrix(bw));
                let mut coef = vec![vec![0.0; bw]; bh];
                for (u, row) in coef.iter_mut().enumerate() {
                    for (v, cv) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..bh {
                            for j in 0..bw {
                                acc += my[u][i] * mx[v][j] * image.get(c, by + i, bx + j);
                            }
                        }
                        *cv = acc;
                    }
                }
                for (u, row) in coef.iter_mut().enumerate() {
                    for (v, cv) in row.iter_mut().enumerate() {
                        if u + v == 0 {
                            continue;
                        }
                        let step = base_step * (1 + u + v) as f64;
                        *cv = if step.is_infinite() { 0.0 } else { (*cv / step).round() * step };
                    }
                }
                for i in 0..bh {
                    for j in 0..bw {
                        let mut acc = 0.0;
                        for (u, row) in coef.iter().enumerate() {
                            for (v, cv) in row.iter().enumerate() {
                                acc += my[u][i] * mx[v][j] * cv;
                            }
                        }
                        out.set(c, by + i, bx + j, acc);
                    }
                }
            }
        }
    }
    out
}

fn crop_pad(image: &Image, fraction: f64) -> Image {
    let sh = image.shape();
    let by = (sh.height as f64 * fraction).round() as usize;
    let bx = (sh.width as f64 * fraction).round() as usize;
    Image::from_fn(sh, |c, y, x| {
        if y < by || x < bx || y + by >= sh.height || x + bx >= sh.width {
            0.5
        } else {
            image.get(c, y, x)
        }
    })
}

fn bilinear_at(image: &Image, c: usize, fy: f64, fx: f64) -> f64 {
    let sh = image.shape();
    let fy = fy.clamp(0.0, (sh.height - 1) as f64);
    let fx = fx.clamp(0.0, (sh.width - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(sh.height - 1), (x0 + 1).min(sh.width - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let top = image.get(c, y0, x0) * (1.0 - tx) + image.get(c, y0, x1) * tx;
    let bottom = image.get(c, y1, x0) * (1.0 - tx) + image.get(c, y1, x1) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn rotate(image: &Image, angle: f64) -> Image {
    let sh = image.shape();
    let (cy, cx) = ((sh.height as f64 - 1.0) / 2.0, (sh.width as f64 - 1.0) / 2.0);
    let (ca, sa) = (angle.cos(), angle.sin());
    Image::from_fn(sh, |c, y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        // inverse mapping: rotate output coordinates back into the source
        let sy = cy + ca * dy - sa * dx;
        let sx = cx + sa * dy + ca * dx;
        bilinear_at(image, c, sy, sx)
    })
}

fn median(image: &Image, r: usize) -> Image {
    let sh = image.shape();
    let r = r as isize;
    let (h, w) = (sh.height as isize, sh.width as isize);
    let mut window = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = Image::zeros(sh);
    for c in 0..sh.channels {
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sy, sx) = ((y + dy).clamp(0, h - 1), (x + dx).clamp(0, w - 1));
                        window.push(image.get(c, sy as usize, sx as usize));
                    }
                }
                let mid = window.len() / 2;
                window.select_nth_unstable_by(mid, f64::total_cmp);
                out.set(c, y as usize, x as usize, window[mid]);
            }
        }
    }
    out
}

fn pixelate(image: &Image, block: usize) -> Image {
    let sh = image.shape();
    let mut out = image.clone();
    for c in 0..sh.channels {
        for by in (0..sh.height).step_by(block) {
            for bx in (0..sh.width).step_by(block) {
                let (bh, bw) = (block.min(sh.height - by), block.min(sh.width - bx));
                let mut acc = 0.0;
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        acc += image.get(c, y, x);
                    }
                }
                let mean = acc / (bh * bw) as f64;
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        out.set(c, y, x, mean);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{synth_concept_image, ConceptId, ConceptStyle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_image() -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        synth_concept_image(&ConceptStyle::for_concept(ConceptId(2), 0), Shape::new(32, 32, 3), &mut rng)
    }

    #[test]
    fn severity_zero_is_identity() {
        let img = sample_image();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in DegradationKind::ALL {
            let out = degrade(&img, Degradation::new(kind, 0.0).unwrap(), &mut rng).unwrap();
            assert_eq!(out, img, "{kind}");
        }
    }

    #[test]
    fn every_kind_changes_the_image_and_stays_in_range() {
        let img = sample_image();
        for kind in DegradationKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let out = degrade(&img, Degradation::new(kind, 0.5).unwrap(), &mut rng).unwrap();
            assert_ne!(out, img, "{kind}");
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
            let mut rng2 = ChaCha8Rng::seed_from_u64(3);
            assert_eq!(out, degrade(&img, Degradation::new(kind, 0.5).unwrap(), &mut rng2).unwrap());
        }
    }

    #[test]
    fn noise_std_matches_configuration() {
        let img = Image::filled(Shape::new(64, 64, 3), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = degrade(&img, Degradation::new(DegradationKind::GaussianNoise, 0.5).unwrap(), &mut rng).unwrap();
        let d: Vec<f64> = out.data().iter().map(|v| v - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((std - 0.1).abs() <= 0.01, "{std}");
    }

    #[test]
    fn full_block_quantize_is_blockwise_constant() {
        let img = sample_image();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = degrade(&img, Degradation::new(DegradationKind::BlockQuantize, 1.0).unwrap(), &mut rng).unwrap();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let anchor = out.get(c, y / 8 * 8, x / 8 * 8);
                    assert!((out.get(c, y, x) - anchor).abs() < 1e-12);
                }
            }
        }
        // and mild quantization keeps the image close
        let mild = degrade(&img, Degradation::new(DegradationKind::BlockQuantize, 0.05).unwrap(), &mut rng).unwrap();
        assert!(crate::image::mse(&mild, &img).unwrap() < 1e-4);
    }

    #[test]
    fn spec_parsing() {
        let v = parse_spec("gaussian-blur:0.25, pixelate:1").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0], Degradation { kind: DegradationKind::GaussianBlur, severity: 0.25 });
        assert!(parse_spec("jpeg:0.5").is_err());
        assert!(parse_spec("gamma:1.5").is_err());
        assert!(parse_spec("gamma").is_err());
        assert_eq!(DegradationKind::ALL.len(), 14);
        for k in DegradationKind::ALL {
            assert_eq!(DegradationKind::parse(k.name()).unwrap(), k);
        }
    }
}
