use crate::error::{ensure, Result};
use crate::image::{Image, Shape};

use super::bank::CarrierBank;
use super::secret::Secret;

/// Default operating strength for dataset encryption.
pub const DEFAULT_STRENGTH: f64 = 0.3;

/// Number of images averaged by [`estimate_watermark_by_averaging`] in the
/// standard pipeline.
pub const AVERAGING_IMAGES: usize = 100;

/// Image-shaped additive pattern derived from a secret.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWatermark {
    pub pattern: Image,
    pub secret: Secret,
}

impl SpatialWatermark {
    pub fn shape(&self) -> Shape {
        self.pattern.shape()
    }

    pub fn negated(&self) -> SpatialWatermark {
        SpatialWatermark {
            pattern: self.pattern.map(|v| -v),
            secret: self.secret.complement(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    #[default]
    Clip,
    NoClip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub strength: f64,
    pub clip: ClipMode,
}

impl EmbedConfig {
    pub fn new(strength: f64, clip: ClipMode) -> Result<Self> {
        let cfg = EmbedConfig { strength, clip };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.strength),
            InvalidArgument,
            "watermark strength {} outside [0, 1]",
            self.strength
        );
        Ok(())
    }
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            strength: DEFAULT_STRENGTH,
            clip: ClipMode::Clip,
        }
    }
}

/// Signed carrier sum `(1/√b)·Σ σ_i·carrier_i` with `σ_i = ±1` from the bits.
pub fn watermark_from_secret(secret: &Secret, bank: &CarrierBank) -> Result<SpatialWatermark> {
    ensure!(
        secret.len() == bank.bits(),
        ShapeMismatch,
        "secret has {} bits, bank expects {}",
        secret.len(),
        bank.bits()
    );
    let scale = 1.0 / (bank.bits() as f64).sqrt();
    let mut pattern = vec![0.0; bank.shape().len()];
    for (i, bit) in secret.bits().enumerate() {
        let s = if bit { scale } else { -scale };
        crate::num::axpy(s, bank.carrier(i), &mut pattern);
    }
    Ok(SpatialWatermark {
        pattern: Image::from_vec(bank.shape(), pattern)?,
        secret: secret.clone(),
    })
}

/// Recovers a watermark as the mean residual `embed(X, W, 1) − X` over a
/// set of images, mirroring the black-box estimate used with learned
/// encoders. Without clipping the content cancels and the result equals the
/// analytic pattern.
pub fn estimate_watermark_by_averaging(
    secret: &Secret,
    bank: &CarrierBank,
    images: &[Image],
    clip: ClipMode,
) -> Result<SpatialWatermark> {
    ensure!(!images.is_empty(), InvalidArgument, "no images to average");
    let wm = watermark_from_secret(secret, bank)?;
    let cfg = EmbedConfig { strength: 1.0, clip };
    let mut acc = Image::zeros(bank.shape());
    for img in images {
        ensure!(
            img.shape() == bank.shape(),
            ShapeMismatch,
            "image {} does not match bank {}",
            img.shape(),
            bank.shape()
        );
        let enc = embed(img, &wm, cfg)?;
        acc.add_scaled(&enc, 1.0)?;
        acc.add_scaled(img, -1.0)?;
    }
    let n = images.len() as f64;
    Ok(SpatialWatermark {
        pattern: acc.map(|v| v / n),
        secret: secret.clone(),
    })
}

/// Bilinear resize of the pattern to `target`'s height and width.
pub fn resize_watermark(wm: &SpatialWatermark, target: Shape) -> Result<SpatialWatermark> {
    target.validate(8)?;
    ensure!(
        target.channels == wm.shape().channels,
        ShapeMismatch,
        "cannot resize a {}-channel watermark to {target}",
        wm.shape().channels
    );
    Ok(SpatialWatermark {
        pattern: wm.pattern.resize_bilinear(target.height, target.width),
        secret: wm.secret.clone(),
    })
}

/// `X_W = X + m·R(W, h, w)`, clipped to `[0, 1]` unless disabled.
pub fn embed(image: &Image, wm: &SpatialWatermark, cfg: EmbedConfig) -> Result<Image> {
    cfg.validate()?;
    let shape = image.shape();
    let mut out = image.clone();
    if cfg.strength == 0.0 {
        return Ok(out);
    }
    if wm.shape() == shape {
        out.add_scaled(&wm.pattern, cfg.strength)?;
    } else {
        let resized = resize_watermark(wm, shape)?;
        out.add_scaled(&resized.pattern, cfg.strength)?;
    }
    if cfg.clip == ClipMode::Clip {
        out.clip_unit();
    }
    Ok(out)
}

/// How a dual-watermarked image is divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    /// First watermark on the left `⌈w/2⌉` columns, second on the rest.
    #[default]
    LeftRight,
    /// First watermark on the top `⌈h/2⌉` rows, second on the rest.
    TopBottom,
}

/// A rectangular window `(y0, x0, height, width)`.
pub type Region = (usize, usize, usize, usize);

impl Split {
    pub fn regions(self, shape: Shape) -> [Region; 2] {
        let (h, w) = (shape.height, shape.width);
        match self {
            Split::LeftRight => {
                let l = w.div_ceil(2);
                [(0, 0, h, l), (0, l, h, w - l)]
            }
            Split::TopBottom => {
                let t = h.div_ceil(2);
                [(0, 0, t, w), (t, 0, h - t, w)]
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::LeftRight => "left-right",
            Split::TopBottom => "top-bottom",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "left-right" => Some(Split::LeftRight),
            "top-bottom" => Some(Split::TopBottom),
            _ => None,
        }
    }
}

/// Embeds `first` and `second` into the two halves of `image`, each resized
/// to its half.
pub fn embed_dual(
    image: &Image,
    first: &SpatialWatermark,
    second: &SpatialWatermark,
    cfg: EmbedConfig,
    split: Split,
) -> Result<Image> {
    let shape = image.shape();
    let min_side = match split {
        Split::LeftRight => shape.width,
        Split::TopBottom => shape.height,
    };
    ensure!(
        min_side >= 16,
        InvalidArgument,
        "dual embedding needs the split side to be at least 16 px, image is {shape}"
    );
    let mut out = image.clone();
    for (wm, (y0, x0, h, w)) in [first, second].into_iter().zip(split.regions(shape)) {
        let half = image.crop(y0, x0, h, w)?;
        let enc = embed(&half, wm, cfg)?;
        out.paste(&enc, y0, x0)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode::decode_hard;
    use rand::SeedableRng;

    fn bank() -> CarrierBank {
        CarrierBank::build(7, 160, Shape::new(64, 64, 3)).unwrap()
    }

    #[test]
    fn all_ones_is_plain_carrier_sum() {
        let b = CarrierBank::build(3, 16, Shape::new(8, 8, 3)).unwrap();
        let wm = watermark_from_secret(&Secret::ones(16), &b).unwrap();
        let mut expect = vec![0.0; b.shape().len()];
        for i in 0..16 {
            for (e, c) in expect.iter_mut().zip(b.carrier(i)) {
                *e += c;
            }
        }
        for (p, e) in wm.pattern.data().iter().zip(&expect) {
            assert!((p - e / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn complement_negates_pattern() {
        let b = bank();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = Secret::random(160, &mut rng);
        let a = watermark_from_secret(&s, &b).unwrap();
        let c = watermark_from_secret(&s.complement(), &b).unwrap();
        for (x, y) in a.pattern.data().iter().zip(c.pattern.data()) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!(a.pattern.mean().abs() <= 1e-4);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(watermark_from_secret(&Secret::zeros(10), &bank()).is_err());
    }

    #[test]
    fn zero_strength_is_identity() {
        let b = bank();
        let wm = watermark_from_secret(&Secret::ones(160), &b).unwrap();
        let img = Image::filled(b.shape(), 0.3);
        let out = embed(&img, &wm, EmbedConfig::new(0.0, ClipMode::Clip).unwrap()).unwrap();
        assert_eq!(out, img);
        assert!(EmbedConfig::new(1.2, ClipMode::Clip).is_err());
        assert!(embed(&img, &wm, EmbedConfig { strength: -0.1, clip: ClipMode::Clip }).is_err());
    }

    #[test]
    fn zero_image_round_trip_at_full_strength() {
        let b = bank();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = Secret::random(160, &mut rng);
        let wm = watermark_from_secret(&s, &b).unwrap();
        let out = embed(&Image::zeros(b.shape()), &wm, EmbedConfig::new(1.0, ClipMode::NoClip).unwrap()).unwrap();
        assert_eq!(decode_hard(&out, &b), s);
    }

    #[test]
    fn averaging_matches_analytic_pattern() {
        let b = CarrierBank::build(7, 160, Shape::new(32, 32, 3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s = Secret::random(160, &mut rng);
        let wm = watermark_from_secret(&s, &b).unwrap();
        let grays = vec![Image::filled(b.shape(), 0.5); AVERAGING_IMAGES];
        let est = estimate_watermark_by_averaging(&s, &b, &grays, ClipMode::NoClip).unwrap();
        let dev = max_abs_diff(&est.pattern, &wm.pattern);
        assert!(dev <= 1e-6, "gray deviation {dev}");

        use rand::Rng;
        let randoms: Vec<Image> = (0..AVERAGING_IMAGES)
            .map(|_| Image::from_fn(b.shape(), |_, _, _| rng.random::<f64>()))
            .collect();
        let est = estimate_watermark_by_averaging(&s, &b, &randoms, ClipMode::NoClip).unwrap();
        assert!(max_abs_diff(&est.pattern, &wm.pattern) <= 1e-6);

        // near-white content saturates: the estimate loses the positive half
        let whites = vec![Image::filled(b.shape(), 0.98); AVERAGING_IMAGES];
        let est = estimate_watermark_by_averaging(&s, &b, &whites, ClipMode::Clip).unwrap();
        let dev = max_abs_diff(&est.pattern, &wm.pattern);
        assert!(dev > 0.5, "clipping should distort the estimate, max deviation {dev}");

        assert!(estimate_watermark_by_averaging(&s, &b, &[], ClipMode::Clip).is_err());
        let wrong = vec![Image::zeros(Shape::new(16, 16, 3))];
        assert!(estimate_watermark_by_averaging(&s, &b, &wrong, ClipMode::Clip).is_err());
    }

    #[test]
    fn strength_is_linear_without_clipping() {
        let b = CarrierBank::build(7, 32, Shape::new(16, 16, 3)).unwrap();
        let wm = watermark_from_secret(&Secret::ones(32), &b).unwrap();
        let img = Image::from_fn(b.shape(), |c, y, x| ((c + y + x) % 5) as f64 / 5.0);
        let cfg = |m| EmbedConfig::new(m, ClipMode::NoClip).unwrap();
        let once = embed(&img, &wm, cfg(0.7)).unwrap();
        let twice = embed(&embed(&img, &wm, cfg(0.3)).unwrap(), &wm, cfg(0.4)).unwrap();
        assert!(max_abs_diff(&once, &twice) < 1e-12);
    }

    #[test]
    fn resize_identity_and_upscale_decode() {
        let b = bank();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let s = Secret::random(160, &mut rng);
        let wm = watermark_from_secret(&s, &b).unwrap();
        assert_eq!(resize_watermark(&wm, b.shape()).unwrap(), wm);
        assert!(resize_watermark(&wm, Shape::new(4, 4, 3)).is_err());

        let big = Shape::new(128, 128, 3);
        let up_bank = b.resized(big).unwrap();
        let enc = embed(&Image::filled(big, 0.5), &wm, EmbedConfig::new(1.0, ClipMode::NoClip).unwrap()).unwrap();
        assert_eq!(decode_hard(&enc, &up_bank), s);
    }

    #[test]
    fn dual_embed_swaps_with_inputs() {
        let b = CarrierBank::build(7, 160, Shape::new(32, 32, 3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (s1, s2) = (Secret::random(160, &mut rng), Secret::random(160, &mut rng));
        let (w1, w2) = (watermark_from_secret(&s1, &b).unwrap(), watermark_from_secret(&s2, &b).unwrap());
        let img = Image::filled(b.shape(), 0.5);
        let cfg = EmbedConfig::new(1.0, ClipMode::NoClip).unwrap();
        for split in [Split::LeftRight, Split::TopBottom] {
            let [ra, rb] = split.regions(b.shape());
            let (ba, bb) = (
                b.resized(Shape::new(ra.2, ra.3, 3)).unwrap(),
                b.resized(Shape::new(rb.2, rb.3, 3)).unwrap(),
            );
            let enc = embed_dual(&img, &w1, &w2, cfg, split).unwrap();
            assert_eq!(decode_hard(&enc.crop(ra.0, ra.1, ra.2, ra.3).unwrap(), &ba), s1);
            assert_eq!(decode_hard(&enc.crop(rb.0, rb.1, rb.2, rb.3).unwrap(), &bb), s2);
            let swapped = embed_dual(&img, &w2, &w1, cfg, split).unwrap();
            assert_eq!(decode_hard(&swapped.crop(ra.0, ra.1, ra.2, ra.3).unwrap(), &ba), s2);
            assert_eq!(decode_hard(&swapped.crop(rb.0, rb.1, rb.2, rb.3).unwrap(), &bb), s1);
        }
        let narrow = Image::filled(Shape::new(32, 12, 3), 0.5);
        assert!(embed_dual(&narrow, &w1, &w2, cfg, Split::LeftRight).is_err());
    }

    #[test]
    fn odd_split_gives_ceiling_to_first_half() {
        let [a, b] = Split::LeftRight.regions(Shape::new(10, 17, 3));
        assert_eq!(a, (0, 0, 10, 9));
        assert_eq!(b, (0, 9, 10, 8));
        let [a, b] = Split::TopBottom.regions(Shape::new(17, 10, 3));
        assert_eq!(a, (0, 0, 9, 10));
        assert_eq!(b, (9, 0, 8, 10));
    }

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
