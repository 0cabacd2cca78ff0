use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{embed, embed_dual, watermark_from_secret, CarrierBank, ClipMode, EmbedConfig, SpatialWatermark, Split};
use crate::error::{ensure, Error, Result};
use crate::image::{Image, Shape};
use crate::parallel::{self, Exec};

use super::registry::{ConceptId, ConceptRegistry};
use super::synth::{synth_concept_image, ConceptStyle};

/// Default held-out fraction per concept.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    HeldOut,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::HeldOut => "heldout",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Partition::Train),
            "heldout" => Some(Partition::HeldOut),
            _ => None,
        }
    }
}

/// One dataset image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub clean: Image,
    pub encrypted: Image,
    pub concept: ConceptId,
    /// Content concept of a dual-watermarked image (the first id is the media concept).
    pub second: Option<ConceptId>,
    pub partition: Partition,
}

/// Dual-watermark layout: media concepts on the first half, content on the second.
#[derive(Debug, Clone)]
pub struct DualLayout<'a> {
    pub content: &'a ConceptRegistry,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// Images per concept (or per concept pair in dual mode).
    pub per_concept: usize,
    pub shape: Shape,
    pub embed: EmbedConfig,
    pub holdout_fraction: f64,
    /// Rotates the hue wheel of the procedural families.
    pub style_seed: u64,
    /// Seeds per-image randomness.
    pub image_seed: u64,
}

impl DatasetConfig {
    pub fn new(per_concept: usize, shape: Shape, strength: f64) -> Self {
        DatasetConfig {
            per_concept,
            shape,
            embed: EmbedConfig {
                strength,
                clip: ClipMode::Clip,
            },
            holdout_fraction: HOLDOUT_FRACTION,
            style_seed: 0,
            image_seed: 0,
        }
    }

    /// `(train, held out)` counts for one concept.
    pub fn split_counts(&self) -> (usize, usize) {
        let held = ((self.per_concept as f64 * self.holdout_fraction).round() as usize).max(1);
        (self.per_concept - held, held)
    }
}

/// Encrypted procedural dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: Shape,
    pub strength: f64,
    pub split: Option<Split>,
    pub entries: Vec<Entry>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.partition == Partition::Train)
    }

    pub fn held_out(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.partition == Partition::HeldOut)
    }

    pub fn is_dual(&self) -> bool {
        self.split.is_some()
    }
}

/// Builds the single-watermark dataset: every image of concept `j` carries `W_j`.
pub fn build_encrypted_dataset(registry: &ConceptRegistry, bank: &CarrierBank, cfg: &DatasetConfig) -> Result<Dataset> {
    build_inner(registry, None, bank, cfg, |id| ConceptStyle::for_concept(id, cfg.style_seed))
}

/// Same as [`build_encrypted_dataset`] with caller-provided families, for
/// example to make distinct concepts visually identical.
pub fn build_encrypted_dataset_with_styles(
    registry: &ConceptRegistry,
    bank: &CarrierBank,
    cfg: &DatasetConfig,
    style: impl Fn(ConceptId) -> ConceptStyle + Sync,
) -> Result<Dataset> {
    build_inner(registry, None, bank, cfg, style)
}

/// Builds the dual-watermark dataset over the full `media × content` grid.
pub fn build_dual_dataset(
    media: &ConceptRegistry,
    layout: DualLayout<'_>,
    bank: &CarrierBank,
    cfg: &DatasetConfig,
) -> Result<Dataset> {
    let style_seed = cfg.style_seed;
    let n_media = media.len();
    // content motifs are offset so they differ from the media families
    build_inner(media, Some(layout), bank, cfg, move |id| {
        ConceptStyle::for_concept(ConceptId(id.0 + n_media), style_seed)
    })
}

fn build_inner(
    registry: &ConceptRegistry,
    dual: Option<DualLayout<'_>>,
    bank: &CarrierBank,
    cfg: &DatasetConfig,
    style_of: impl Fn(ConceptId) -> ConceptStyle + Sync,
) -> Result<Dataset> {
    cfg.embed.validate()?;
    ensure!(
        cfg.per_concept >= 2,
        InvalidArgument,
        "need at least 2 images per concept so both splits are populated, got {}",
        cfg.per_concept
    );
    ensure!(
        (0.0..1.0).contains(&cfg.holdout_fraction),
        InvalidArgument,
        "held-out fraction {} outside [0, 1)",
        cfg.holdout_fraction
    );
    ensure!(
        registry.bits() == bank.bits(),
        ShapeMismatch,
        "registry secrets have {} bits but the bank has {}",
        registry.bits(),
        bank.bits()
    );
    ensure!(
        bank.shape().channels == cfg.shape.channels,
        ShapeMismatch,
        "bank has {} channels, dataset images have {}",
        bank.shape().channels,
        cfg.shape.channels
    );
    cfg.shape.validate(8)?;

    let media_wms = watermarks(registry, bank)?;
    let groups: Vec<(ConceptId, Option<ConceptId>)> = match &dual {
        None => registry.ids().map(|id| (id, None)).collect(),
        Some(d) => {
            ensure!(
                d.content.bits() == bank.bits(),
                ShapeMismatch,
                "content registry secrets have {} bits but the bank has {}",
                d.content.bits(),
                bank.bits()
            );
            registry
                .ids()
                .flat_map(|m| d.content.ids().map(move |c| (m, Some(c))))
                .collect()
        }
    };
    let content_wms = match &dual {
        Some(d) => watermarks(d.content, bank)?,
        None => Vec::new(),
    };
    let (train, _) = cfg.split_counts();
    let k = cfg.per_concept;
    let split = dual.as_ref().map(|d| d.split);
    let media_style = |id| style_of(id);

    let entries = parallel::map_range(Exec::default(), groups.len() * k, |idx| -> Result<Entry> {
        let (media, content) = groups[idx / k];
        let within = idx % k;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.image_seed);
        rng.set_stream(idx as u64);
        let style = match content {
            None => media_style(media),
            Some(c) => ConceptStyle::compose(
                &ConceptStyle::for_concept(media, cfg.style_seed),
                &media_style(c),
            ),
        };
        let clean = synth_concept_image(&style, cfg.shape, &mut rng);
        let encrypted = match (content, split) {
            (Some(c), Some(split)) => embed_dual(&clean, &media_wms[media.0], &content_wms[c.0], cfg.embed, split)?,
            _ => embed(&clean, &media_wms[media.0], cfg.embed)?,
        };
        Ok(Entry {
            clean,
            encrypted,
            concept: media,
            second: content,
            partition: if within < train { Partition::Train } else { Partition::HeldOut },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        shape: cfg.shape,
        strength: cfg.embed.strength,
        split,
        entries,
    })
}

/// Watermark of every concept in `registry`.
pub fn watermarks(registry: &ConceptRegistry, bank: &CarrierBank) -> Result<Vec<SpatialWatermark>> {
    parallel::map_slice(Exec::default(), registry.secrets(), |s| watermark_from_secret(s, bank))
        .into_iter()
        .collect()
}

const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "path,clean_path,concept,second_concept,split,strength";

/// Manifest-relative path of entry `i`'s encrypted image.
pub fn entry_path(shape: Shape, i: usize) -> String {
    let ext = if shape.channels == 1 { "pgm" } else { "ppm" };
    format!("images/{i:06}.{ext}")
}

/// Writes images as 16-bit PNM plus `manifest.csv`.
///
/// Manifest columns: `path,clean_path,concept,second_concept,split,strength`;
/// `second_concept` is `-` for single-watermark entries. A `# split=...` line
/// records the dual layout when present.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    let clean_dir = dir.join("clean");
    for d in [&img_dir, &clean_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = String::new();
    if let Some(split) = dataset.split {
        writeln!(manifest, "# split={}", split.name()).expect("string write");
    }
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    for (i, e) in dataset.entries.iter().enumerate() {
        let rel = entry_path(dataset.shape, i);
        let clean_rel = format!("clean/{}", &rel["images/".len()..]);
        e.encrypted.write_pnm(&dir.join(&rel))?;
        e.clean.write_pnm(&dir.join(&clean_rel))?;
        let second = e.second.map_or_else(|| "-".to_string(), |c| c.0.to_string());
        writeln!(
            manifest,
            "{rel},{clean_rel},{},{second},{},{}",
            e.concept.0,
            e.partition.name(),
            dataset.strength
        )
        .expect("string write");
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`]. The manifest is authoritative.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, d: &str| Error::format("dataset manifest", path.clone(), format!("line {line}: {d}"));
    let mut split = None;
    let mut entries = Vec::new();
    let mut strength = None;
    let mut shape = None;
    let mut header_seen = false;
    for (n, line) in text.lines().enumerate() {
        let ln = n + 1;
        if let Some(meta) = line.strip_prefix("# split=") {
            split = Some(Split::parse(meta.trim()).ok_or_else(|| bad(ln, "unknown split"))?);
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line.trim() != MANIFEST_HEADER {
                return Err(bad(ln, "unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let [rel, clean_rel, concept, second, part, m] = cols[..] else {
            return Err(bad(ln, "expected 6 columns"));
        };
        let concept = concept.parse().map_err(|_| bad(ln, "bad concept id"))?;
        let second = match second {
            "-" => None,
            s => Some(ConceptId(s.parse().map_err(|_| bad(ln, "bad second concept id"))?)),
        };
        let partition = Partition::parse(part).ok_or_else(|| bad(ln, "bad split name"))?;
        let m: f64 = m.parse().map_err(|_| bad(ln, "bad strength"))?;
        strength.get_or_insert(m);
        let encrypted = Image::read_pnm(&dir.join(PathBuf::from(rel)))?;
        let clean = Image::read_pnm(&dir.join(PathBuf::from(clean_rel)))?;
        let s = *shape.get_or_insert(encrypted.shape());
        if encrypted.shape() != s || clean.shape() != s {
            return Err(bad(ln, "image shape differs from the first entry"));
        }
        entries.push(Entry {
            clean,
            encrypted,
            concept: ConceptId(concept),
            second,
            partition,
        });
    }
    let shape = shape.ok_or_else(|| bad(0, "no entries"))?;
    Ok(Dataset {
        shape,
        strength: strength.unwrap_or(0.0),
        split,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode_hard;
    use crate::concepts::registry::assign_secrets;

    const SHAPE: Shape = Shape::new(32, 32, 3);

    #[test]
    fn split_arithmetic() {
        let reg = assign_secrets(8, 160, 1).unwrap();
        let bank = CarrierBank::build(7, 160, SHAPE).unwrap();
        let cfg = DatasetConfig::new(100, SHAPE, 0.3);
        let ds = build_encrypted_dataset(&reg, &bank, &cfg).unwrap();
        assert_eq!(ds.train().count(), 720);
        assert_eq!(ds.held_out().count(), 80);
        for id in reg.ids() {
            assert_eq!(ds.held_out().filter(|e| e.concept == id).count(), 10);
        }
        assert_eq!(DatasetConfig::new(2, SHAPE, 0.3).split_counts(), (1, 1));
        assert!(build_encrypted_dataset(&reg, &bank, &DatasetConfig::new(1, SHAPE, 0.3)).is_err());
    }

    #[test]
    fn every_image_agrees_most_with_its_concept() {
        let reg = assign_secrets(8, 160, 2).unwrap();
        let bank = CarrierBank::build(7, 160, SHAPE).unwrap();
        let ds = build_encrypted_dataset(&reg, &bank, &DatasetConfig::new(20, SHAPE, 0.5)).unwrap();
        for e in &ds.entries {
            let s = decode_hard(&e.encrypted, &bank);
            let own = reg.secret(e.concept).hamming(&s).unwrap();
            for other in reg.ids().filter(|&id| id != e.concept) {
                assert!(own < reg.secret(other).hamming(&s).unwrap());
            }
        }
    }

    #[test]
    fn registry_bank_mismatch_rejected() {
        let reg = assign_secrets(4, 64, 2).unwrap();
        let bank = CarrierBank::build(7, 160, SHAPE).unwrap();
        assert!(build_encrypted_dataset(&reg, &bank, &DatasetConfig::new(4, SHAPE, 0.3)).is_err());
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let reg = assign_secrets(2, 160, 2).unwrap();
        let content = assign_secrets(2, 160, 3).unwrap();
        let bank = CarrierBank::build(7, 160, SHAPE).unwrap();
        let layout = DualLayout {
            content: &content,
            split: Split::TopBottom,
        };
        let ds = build_dual_dataset(&reg, layout, &bank, &DatasetConfig::new(3, SHAPE, 0.3)).unwrap();
        assert_eq!(ds.entries.len(), 12);
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.entries.len(), 12);
        assert_eq!(back.split, Some(Split::TopBottom));
        for (a, b) in ds.entries.iter().zip(&back.entries) {
            assert_eq!((a.concept, a.second, a.partition), (b.concept, b.second, b.partition));
        }
    }
}
