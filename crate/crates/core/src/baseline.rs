//! Visual-correlation attribution for comparison.
//!
//! Each image is described by an 8×8 block-averaged luminance thumbnail and
//! three 16-bin colour histograms. The two parts are normalized separately
//! and the concatenation is L2-normalized, so the thumbnail part is
//! insensitive to a global gain. Attribution picks the concept of the most
//! similar training image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::concepts::ConceptId;
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::num;
use crate::parallel::{self, Exec};

pub const THUMB: usize = 8;
pub const HIST_BINS: usize = 16;
pub const FEATURE_DIM: usize = THUMB * THUMB + 3 * HIST_BINS;

fn normalize(v: &mut [f64]) {
    let n = num::dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

pub fn embed_feature(image: &Image) -> Vec<f64> {
    let s = image.shape();
    let lum = image.luminance();
    let mut thumb = vec![0.0; THUMB * THUMB];
    let mut counts = vec![0usize; THUMB * THUMB];
    for y in 0..s.height {
        for x in 0..s.width {
            let cell = (y * THUMB / s.height) * THUMB + x * THUMB / s.width;
            thumb[cell] += lum[y * s.width + x];
            counts[cell] += 1;
        }
    }
    for (t, c) in thumb.iter_mut().zip(&counts) {
        if *c > 0 {
            *t /= *c as f64;
        }
    }
    let mut hist = vec![0.0; 3 * HIST_BINS];
    for k in 0..3 {
        for v in image.channel(k % s.channels) {
            let bin = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist[k * HIST_BINS + bin] += 1.0;
        }
    }
    normalize(&mut thumb);
    normalize(&mut hist);
    let mut f = thumb;
    f.extend(hist);
    normalize(&mut f);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    vectors: Vec<Vec<f64>>,
    labels: Vec<ConceptId>,
}

impl FeatureIndex {
    /// Indexes labelled images in the given order.
    pub fn build(exec: Exec, images: &[(&Image, ConceptId)]) -> Self {
        let vectors = parallel::map_slice(exec, images, |(img, _)| embed_feature(img));
        FeatureIndex {
            vectors,
            labels: images.iter().map(|(_, c)| *c).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ConceptId] {
        &self.labels
    }

    /// Max-cosine label; ties go to the earliest entry.
    pub fn nearest_concept(&self, query: &Image) -> Result<(ConceptId, f64)> {
        ensure!(!self.is_empty(), InvalidArgument, "feature index is empty");
        let q = embed_feature(query);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, v) in self.vectors.iter().enumerate() {
            let c = num::dot(&q, v);
            if c > best.1 {
                best = (i, c);
            }
        }
        Ok((self.labels[best.0], best.1))
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".labels");
        PathBuf::from(p)
    }

    /// Writes the vectors as little-endian `f32` and the labels to `<path>.labels`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.len() * FEATURE_DIM * 4);
        for v in &self.vectors {
            for x in v {
                bytes.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let mut text = format!("dim {FEATURE_DIM}\n");
        for l in &self.labels {
            writeln!(text, "{}", l.0).expect("string write");
        }
        let side = Self::sidecar(path);
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let bad = |d: String| Error::format("feature index", side.clone(), d);
        let mut lines = text.lines();
        let dim: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("dim "))
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad("missing dim line".into()))?;
        if dim != FEATURE_DIM {
            return Err(bad(format!("dimension {dim}, expected {FEATURE_DIM}")));
        }
        let labels = lines
            .map(|l| l.trim().parse().map(ConceptId).map_err(|_| bad(format!("bad label {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != labels.len() * dim * 4 {
            return Err(Error::format("feature index", path, "vector file size does not match labels"));
        }
        let vectors = bytes
            .chunks_exact(dim * 4)
            .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
            .collect();
        Ok(FeatureIndex { vectors, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{synth_concept_image, ConceptStyle};
    use crate::image::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(concept: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth_concept_image(&ConceptStyle::for_concept(ConceptId(concept), 0), Shape::new(32, 32, 3), &mut rng)
    }

    #[test]
    fn features_are_unit_and_deterministic() {
        let a = img(1, 1);
        let fa = embed_feature(&a);
        assert_eq!(fa.len(), FEATURE_DIM);
        assert!((num::dot(&fa, &fa).sqrt() - 1.0).abs() < 1e-6);
        assert!((num::dot(&fa, &embed_feature(&a.clone())) - 1.0).abs() < 1e-12);
        let dim = a.map(|v| v * 0.5);
        assert!(num::dot(&fa, &embed_feature(&dim)) < 1.0);
    }

    #[test]
    fn thumbnail_gain_is_normalized_away() {
        // values chosen so the gain keeps every pixel inside its histogram bin
        let shape = Shape::new(16, 16, 3);
        let base = Image::from_fn(shape, |_, y, x| if (x / 4 + y / 4) % 2 == 0 { 0.40 } else { 0.65 });
        let gained = base.map(|v| v * 1.05);
        let (fa, fb) = (embed_feature(&base), embed_feature(&gained));
        assert!((num::dot(&fa, &fb) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_match_and_persistence() {
        let imgs: Vec<Image> = (0..12).map(|i| img(i % 4, i as u64 + 10)).collect();
        let items: Vec<(&Image, ConceptId)> = imgs.iter().enumerate().map(|(i, m)| (m, ConceptId(i % 4))).collect();
        let idx = FeatureIndex::build(Exec::default(), &items);
        for (m, c) in &items {
            let (p, cos) = idx.nearest_concept(m).unwrap();
            assert_eq!(p, *c);
            assert!((cos - 1.0).abs() < 1e-12);
        }
        assert_eq!(idx, FeatureIndex::build(Exec::Sequential, &items));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.bin");
        idx.save(&p).unwrap();
        let back = FeatureIndex::load(&p).unwrap();
        assert_eq!(back.labels(), idx.labels());
        for (m, c) in &items {
            assert_eq!(back.nearest_concept(m).unwrap().0, *c);
        }
        let empty = FeatureIndex::build(Exec::Sequential, &[]);
        assert!(empty.nearest_concept(&imgs[0]).is_err());
    }

    #[test]
    fn well_separated_concepts_are_retrieved() {
        let train: Vec<Image> = (0..40).map(|i| img(i % 8, 100 + i as u64)).collect();
        let items: Vec<(&Image, ConceptId)> = train.iter().enumerate().map(|(i, m)| (m, ConceptId(i % 8))).collect();
        let idx = FeatureIndex::build(Exec::default(), &items);
        let hits = (0..40).filter(|&i| idx.nearest_concept(&img(i % 8, 500 + i as u64)).unwrap().0 == ConceptId(i % 8)).count();
        assert!(hits >= 36, "{hits}");
    }
}
