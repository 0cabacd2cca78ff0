//! Procedural concept families.
//!
//! Each concept owns a base hue, a stripe texture frequency and a shape
//! motif. Individual images vary the texture phase and orientation and the
//! motif's position and size, so images of one concept look alike while
//! staying distinct from each other.

use std::f64::consts::PI;

use rand::Rng;

use crate::image::{Image, Shape};

use super::registry::ConceptId;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    Disc,
    Square,
    Ring,
    Cross,
    Diamond,
    Bar,
}

impl Motif {
    const ALL: [Motif; 6] = [
        Motif::Disc,
        Motif::Square,
        Motif::Ring,
        Motif::Cross,
        Motif::Diamond,
        Motif::Bar,
    ];

    /// Whether the unit-scaled offset `(dy, dx)` lies inside the motif.
    fn contains(self, dy: f64, dx: f64) -> bool {
        let r = (dy * dy + dx * dx).sqrt();
        match self {
            Motif::Disc => r <= 1.0,
            Motif::Square => dy.abs() <= 0.85 && dx.abs() <= 0.85,
            Motif::Ring => (0.6..=1.0).contains(&r),
            Motif::Cross => (dy.abs() <= 0.3 && dx.abs() <= 1.0) || (dx.abs() <= 0.3 && dy.abs() <= 1.0),
            Motif::Diamond => dy.abs() + dx.abs() <= 1.0,
            Motif::Bar => dy.abs() <= 0.35 && dx.abs() <= 1.1,
        }
    }
}

/// Family parameters shared by all images of one concept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConceptStyle {
    /// Base hue in `[0, 1)`.
    pub hue: f64,
    pub saturation: f64,
    /// Stripe cycles across the image.
    pub texture_cycles: f64,
    pub motif: Motif,
    /// Value of the motif relative to the background, signed.
    pub motif_contrast: f64,
}

impl ConceptStyle {
    /// Deterministic style for a concept; `family_seed` rotates the hue wheel.
    pub fn for_concept(id: ConceptId, family_seed: u64) -> Self {
        let j = id.0 as f64;
        let offset = (family_seed % 1000) as f64 / 1000.0;
        // snapped to the centre of one of 36 hue bins
        let hue = (((offset + j * GOLDEN).fract() * 36.0).floor() + 0.5) / 36.0;
        ConceptStyle {
            hue,
            saturation: 0.45 + 0.1 * ((id.0 * 7 % 5) as f64 / 4.0),
            texture_cycles: 1.0 + (id.0 * 3 % 5) as f64,
            motif: Motif::ALL[id.0 % Motif::ALL.len()],
            motif_contrast: if id.0 % 2 == 0 { 0.25 } else { -0.25 },
        }
    }

    /// Media × content composition: colour and texture from `media`, motif from `content`.
    pub fn compose(media: &ConceptStyle, content: &ConceptStyle) -> Self {
        ConceptStyle {
            hue: media.hue,
            saturation: media.saturation,
            texture_cycles: media.texture_cycles,
            motif: content.motif,
            motif_contrast: content.motif_contrast,
        }
    }
}

/// Renders one image of the family described by `style`.
pub fn synth_concept_image<R: Rng + ?Sized>(style: &ConceptStyle, shape: Shape, rng: &mut R) -> Image {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let theta = rng.random::<f64>() * PI;
    let phase = rng.random::<f64>() * 2.0 * PI;
    let hue = (style.hue + (rng.random::<f64>() - 0.5) * 0.02).rem_euclid(1.0);
    let cy = h * (0.3 + 0.4 * rng.random::<f64>());
    let cx = w * (0.3 + 0.4 * rng.random::<f64>());
    let radius = h.min(w) * (0.18 + 0.12 * rng.random::<f64>());
    let base_value = 0.5 + (rng.random::<f64>() - 0.5) * 0.1;
    let (ct, st) = (theta.cos(), theta.sin());
    let freq = 2.0 * PI * style.texture_cycles / h.max(w);

    let mut img = Image::zeros(shape);
    for y in 0..shape.height {
        for x in 0..shape.width {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let stripe = (freq * (fx * ct + fy * st) + phase).sin();
            let mut value = base_value + 0.12 * stripe;
            let mut sat = style.saturation;
            if style.motif.contains((fy - cy) / radius, (fx - cx) / radius) {
                value = base_value + style.motif_contrast;
                sat *= 0.8;
            }
            let rgb = hsv_to_rgb(hue, sat, value.clamp(0.0, 1.0));
            match shape.channels {
                1 => img.set(0, y, x, 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]),
                c => {
                    for (ch, v) in rgb.iter().enumerate().take(c) {
                        img.set(ch, y, x, *v);
                    }
                    for ch in 3..c {
                        img.set(ch, y, x, value);
                    }
                }
            }
        }
    }
    img
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue in `[0, 1)` and saturation of one RGB pixel.
pub fn rgb_to_hue_sat(rgb: [f64; 3]) -> (f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 || max <= 0.0 {
        return (0.0, 0.0);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, d / max)
}

/// Most populated hue bin among pixels with saturation above 0.1.
pub fn hue_mode(img: &Image, bins: usize) -> Option<usize> {
    let s = img.shape();
    if s.channels < 3 || bins == 0 {
        return None;
    }
    let mut hist = vec![0usize; bins];
    for y in 0..s.height {
        for x in 0..s.width {
            let (h, sat) = rgb_to_hue_sat([img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)]);
            if sat > 0.1 {
                hist[((h * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
    }
    let (best, count) = hist.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)))?;
    (*count > 0).then_some(best)
}
