use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Shape};
use crate::parallel::{self, Exec};

const MAGIC: &str = "PMWB1";

/// Strength at which soft bits are calibrated to saturate.
pub const REFERENCE_STRENGTH: f64 = 0.3;

/// Pseudorandom spread-spectrum carriers, one per secret bit.
///
/// Every carrier is zero-mean within each channel and has unit RMS over the
/// whole image. Banks are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierBank {
    seed: u64,
    bits: usize,
    shape: Shape,
    carriers: Vec<f64>,
}

impl CarrierBank {
    /// Generates `bits` carriers for images of `shape`.
    ///
    /// Carrier `i` is drawn from a ChaCha8 stream keyed by `(seed, i)`, so the
    /// bank is reproducible bit-for-bit on any platform.
    pub fn build(seed: u64, bits: usize, shape: Shape) -> Result<Self> {
        Self::build_with(Exec::default(), seed, bits, shape)
    }

    pub fn build_with(exec: Exec, seed: u64, bits: usize, shape: Shape) -> Result<Self> {
        ensure!(bits >= 1, InvalidArgument, "carrier bank needs at least one bit");
        shape.validate(8)?;
        let per = parallel::map_range(exec, bits, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut c: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize_carrier(&mut c, shape);
            c
        });
        Ok(CarrierBank {
            seed,
            bits,
            shape,
            carriers: per.concat(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn carrier(&self, i: usize) -> &[f64] {
        let n = self.shape.len();
        &self.carriers[i * n..(i + 1) * n]
    }

    pub fn carrier_image(&self, i: usize) -> Image {
        Image::from_vec(self.shape, self.carrier(i).to_vec()).expect("carrier matches bank shape")
    }

    /// Logistic gain applied to carrier correlations: `4·√b / m_ref`.
    pub fn gain(&self) -> f64 {
        4.0 * (self.bits as f64).sqrt() / REFERENCE_STRENGTH
    }

    /// Normalized correlation between two carriers.
    pub fn carrier_correlation(&self, i: usize, j: usize) -> f64 {
        crate::num::dot(self.carrier(i), self.carrier(j)) / self.shape.len() as f64
    }

    /// Bilinearly resized copy of every carrier, re-centred and re-normalized.
    ///
    /// Used when watermarks are embedded at a resolution other than the bank's
    /// native one (for example one half of a dual-watermarked image).
    pub fn resized(&self, shape: Shape) -> Result<Self> {
        shape.validate(8)?;
        ensure!(
            shape.channels == self.shape.channels,
            ShapeMismatch,
            "cannot resize {}-channel carriers to {shape}",
            self.shape.channels
        );
        if shape == self.shape {
            return Ok(self.clone());
        }
        let per = parallel::map_range(Exec::default(), self.bits, |i| {
            let mut c = self.carrier_image(i).resize_bilinear(shape.height, shape.width).into_vec();
            normalize_carrier(&mut c, shape);
            c
        });
        Ok(CarrierBank {
            seed: self.seed,
            bits: self.bits,
            shape,
            carriers: per.concat(),
        })
    }

    /// Writes the bank: a text header then little-endian `f32` carriers, row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = self.shape;
        let mut buf = Vec::with_capacity(self.carriers.len() * 4 + 64);
        write!(
            buf,
            "{MAGIC}\n{} {} {} {} {}\n",
            self.bits, s.height, s.width, s.channels, self.seed
        )
        .expect("vec write");
        // planar storage is c-major; the file is row-major with interleaved channels
        for i in 0..self.bits {
            let c = self.carrier(i);
            for y in 0..s.height {
                for x in 0..s.width {
                    for ch in 0..s.channels {
                        let v = c[(ch * s.height + y) * s.width + x] as f32;
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |d: &str| Error::format("watermark bank", path, d.to_string());
        let mut lines = raw.splitn(3, |&b| b == b'\n');
        let magic = lines.next().ok_or_else(|| bad("empty file"))?;
        if magic != MAGIC.as_bytes() {
            return Err(bad("missing PMWB1 magic"));
        }
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(header).map_err(|_| bad("header is not text"))?;
        let fields: Vec<u64> = header
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|_| bad("non-numeric header field")))
            .collect::<Result<_>>()?;
        let [bits, h, w, c, seed] = fields[..] else {
            return Err(bad("header must hold b, height, width, channels, seed"));
        };
        let shape = Shape::new(h as usize, w as usize, c as usize);
        let bits = bits as usize;
        let body = lines.next().unwrap_or(&[]);
        if body.len() != bits * shape.len() * 4 {
            return Err(bad(&format!(
                "expected {} carrier bytes, found {}",
                bits * shape.len() * 4,
                body.len()
            )));
        }
        let mut carriers = vec![0.0; bits * shape.len()];
        let mut k = 0;
        for i in 0..bits {
            let base = i * shape.len();
            for y in 0..shape.height {
                for x in 0..shape.width {
                    for ch in 0..shape.channels {
                        let v = f32::from_le_bytes(body[4 * k..4 * k + 4].try_into().expect("4 bytes"));
                        carriers[base + (ch * shape.height + y) * shape.width + x] = v as f64;
                        k += 1;
                    }
                }
            }
        }
        Ok(CarrierBank {
            seed,
            bits,
            shape,
            carriers,
        })
    }
}

/// Per-channel zero mean, unit RMS over the whole carrier.
fn normalize_carrier(c: &mut [f64], shape: Shape) {
    let plane = shape.plane();
    for ch in c.chunks_exact_mut(plane) {
        let mean = crate::num::sum(ch) / plane as f64;
        for v in ch.iter_mut() {
            *v -= mean;
        }
    }
    let rms = (crate::num::dot(c, c) / c.len() as f64).sqrt();
    for v in c.iter_mut() {
        *v /= rms;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carriers_are_centred_with_unit_rms() {
        let bank = CarrierBank::build(7, 160, Shape::new(64, 64, 3)).unwrap();
        assert_eq!(bank.bits(), 160);
        for i in 0..bank.bits() {
            let img = bank.carrier_image(i);
            assert!(img.mean().abs() <= 1e-6);
            assert!((img.rms() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_carrier_self_correlation_is_one() {
        let bank = CarrierBank::build(7, 1, Shape::new(8, 8, 1)).unwrap();
        assert!((bank.carrier_correlation(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn carriers_are_nearly_orthogonal_at_64() {
        let bank = CarrierBank::build(7, 160, Shape::new(64, 64, 3)).unwrap();
        let mut worst = 0.0f64;
        for i in 0..bank.bits() {
            for j in 0..i {
                worst = worst.max(bank.carrier_correlation(i, j).abs());
            }
        }
        assert!(worst <= 0.15, "worst carrier correlation {worst}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = Shape::new(16, 16, 3);
        let a = CarrierBank::build(7, 20, s).unwrap();
        let b = CarrierBank::build_with(Exec::Sequential, 7, 20, s).unwrap();
        assert_eq!(a, b);
        let c = CarrierBank::build(8, 20, s).unwrap();
        assert_ne!(a.carrier(0), c.carrier(0));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(CarrierBank::build(1, 0, Shape::new(8, 8, 1)).is_err());
        assert!(CarrierBank::build(1, 4, Shape::new(7, 8, 1)).is_err());
        assert!(CarrierBank::build(1, 4, Shape::new(8, 8, 0)).is_err());
    }

    #[test]
    fn file_round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let bank = CarrierBank::build(11, 5, Shape::new(8, 12, 3)).unwrap();
        let path = dir.path().join("bank.pmwb");
        bank.save(&path).unwrap();
        let back = CarrierBank::load(&path).unwrap();
        assert_eq!(back.bits(), 5);
        assert_eq!(back.shape(), bank.shape());
        assert_eq!(back.seed(), 11);
        for i in 0..5 {
            for (a, b) in bank.carrier(i).iter().zip(back.carrier(i)) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
        let text = std::fs::read(&path).unwrap();
        assert!(text.starts_with(b"PMWB1\n5 8 12 3 11\n"));
        std::fs::write(&path, b"PMWB1\n5 8 12 3 11\nshort").unwrap();
        assert!(CarrierBank::load(&path).is_err());
    }

    #[test]
    fn resized_bank_is_normalized() {
        let bank = CarrierBank::build(7, 8, Shape::new(32, 32, 3)).unwrap();
        let half = bank.resized(Shape::new(32, 16, 3)).unwrap();
        for i in 0..8 {
            let img = half.carrier_image(i);
            assert!(img.mean().abs() <= 1e-9);
            assert!((img.rms() - 1.0).abs() <= 1e-9);
        }
    }
}
