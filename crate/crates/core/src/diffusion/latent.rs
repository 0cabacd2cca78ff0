//! Image/latent codecs the denoiser works through.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Shape};

/// Maps images to the latent space the denoiser operates in and back.
///
/// The decoder is frozen during training; only its vector-Jacobian product is
/// needed to carry the bit-recovery gradient back into latent space.
pub trait LatentCodec: Send + Sync {
    fn name(&self) -> &str;

    fn latent_shape(&self, image: Shape) -> Result<Shape>;

    fn encode(&self, image: &Image) -> Result<Image>;

    fn decode(&self, latent: &Image) -> Result<Image>;

    /// `∂L/∂latent` given `∂L/∂image` at `latent`.
    fn decode_vjp(&self, latent: &Image, grad_image: &Image) -> Result<Image>;
}

/// `z = x`
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn name(&self) -> &str {
        "identity"
    }

    fn latent_shape(&self, image: Shape) -> Result<Shape> {
        Ok(image)
    }

    fn encode(&self, image: &Image) -> Result<Image> {
        Ok(image.clone())
    }

    fn decode(&self, latent: &Image) -> Result<Image> {
        Ok(latent.clone())
    }

    fn decode_vjp(&self, _latent: &Image, grad_image: &Image) -> Result<Image> {
        Ok(grad_image.clone())
    }
}

/// Linear autoencoder over non-overlapping `p×p` patches, fitted by PCA.
///
/// Each patch vector of `p·p·C` values is projected onto the top `k`
/// principal directions of the training patches; the latent has `k`
/// channels at `1/p` resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAutoencoder {
    patch: usize,
    image: Shape,
    /// `[dim]` patch mean.
    mean: Vec<f64>,
    /// `[k][dim]` orthonormal rows.
    basis: Vec<Vec<f64>>,
}

impl PatchAutoencoder {
    pub fn fit(images: &[Image], patch: usize, latent_channels: usize) -> Result<Self> {
        ensure!(!images.is_empty(), InvalidArgument, "autoencoder needs training images");
        ensure!(patch >= 1, InvalidArgument, "patch size must be positive");
        let shape = images[0].shape();
        ensure!(
            shape.height % patch == 0 && shape.width % patch == 0,
            ShapeMismatch,
            "image {shape} is not divisible into {patch}x{patch} patches"
        );
        let dim = patch * patch * shape.channels;
        ensure!(
            (1..=dim).contains(&latent_channels),
            InvalidArgument,
            "latent channels {latent_channels} outside 1..={dim}"
        );
        let mut mean = vec![0.0; dim];
        let mut scatter = DMatrix::<f64>::zeros(dim, dim);
        let mut count = 0usize;
        let mut v = vec![0.0; dim];
        for img in images {
            ensure!(img.shape() == shape, ShapeMismatch, "mixed image shapes {} and {shape}", img.shape());
            for py in 0..shape.height / patch {
                for px in 0..shape.width / patch {
                    gather(img, patch, py, px, &mut v);
                    for (m, x) in mean.iter_mut().zip(&v) {
                        *m += x;
                    }
                    for i in 0..dim {
                        for j in 0..dim {
                            scatter[(i, j)] += v[i] * v[j];
                        }
                    }
                    count += 1;
                }
            }
        }
        let n = count as f64;
        for m in &mut mean {
            *m /= n;
        }
        let cov = DMatrix::from_fn(dim, dim, |i, j| scatter[(i, j)] / n - mean[i] * mean[j]);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let basis = order[..latent_channels]
            .iter()
            .map(|&k| {
                let col = eig.eigenvectors.column(k);
                // fix the sign so the fit is reproducible
                let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
                let s = if pivot < 0.0 { -1.0 } else { 1.0 };
                col.iter().map(|x| x * s).collect()
            })
            .collect();
        Ok(PatchAutoencoder { patch, image: shape, mean, basis })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn image_shape(&self) -> Shape {
        self.image
    }

    pub fn latent_channels(&self) -> usize {
        self.basis.len()
    }

    fn check_image(&self, shape: Shape) -> Result<()> {
        ensure!(shape == self.image, ShapeMismatch, "autoencoder fitted for {}, got {shape}", self.image);
        Ok(())
    }

    fn check_latent(&self, shape: Shape) -> Result<()> {
        let want = self.latent_shape(self.image)?;
        ensure!(shape == want, ShapeMismatch, "latent {shape} does not match {want}");
        Ok(())
    }

    fn project_back(&self, latent: &Image, with_mean: bool) -> Image {
        let dim = self.mean.len();
        let mut out = Image::zeros(self.image);
        let mut v = vec![0.0; dim];
        let ls = latent.shape();
        for py in 0..ls.height {
            for px in 0..ls.width {
                if with_mean {
                    v.copy_from_slice(&self.mean);
                } else {
                    v.fill(0.0);
                }
                for (k, row) in self.basis.iter().enumerate() {
                    crate::num::axpy(latent.get(k, py, px), row, &mut v);
                }
                scatter(&mut out, self.patch, py, px, &v);
            }
        }
        out
    }

    /// Plain-text serialization with round-trip float formatting.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = format!(
            "PMAE1\n{} {} {} {} {}\n",
            self.patch,
            self.image.height,
            self.image.width,
            self.image.channels,
            self.basis.len()
        );
        for row in std::iter::once(&self.mean).chain(&self.basis) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |d: &str| Error::format("autoencoder", path, d);
        let mut lines = text.lines();
        if lines.next() != Some("PMAE1") {
            return Err(bad("missing PMAE1 header"));
        }
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing dimensions"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dimension")))
            .collect::<Result<_>>()?;
        let [patch, h, w, c, k] = head[..] else {
            return Err(bad("expected five dimensions"));
        };
        let dim = patch * patch * c;
        let mut rows = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            let row: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("truncated basis"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(bad("row length mismatch"));
            }
            rows.push(row);
        }
        let mean = rows.remove(0);
        Ok(PatchAutoencoder { patch, image: Shape::new(h, w, c), mean, basis: rows })
    }
}

fn gather(img: &Image, p: usize, py: usize, px: usize, out: &mut [f64]) {
    let mut i = 0;
    for c in 0..img.shape().channels {
        for dy in 0..p {
            for dx in 0..p {
                out[i] = img.get(c, py * p + dy, px * p + dx);
                i += 1;
            }
        }
    }
}

fn scatter(img: &mut Image, p: usize, py: usize, px: usize, v: &[f64]) {
    let mut i = 0;
    for c in 0..img.shape().channels {
        for dy in 0..p {
            for dx in 0..p {
                img.set(c, py * p + dy, px * p + dx, v[i]);
                i += 1;
            }
        }
    }
}

impl LatentCodec for PatchAutoencoder {
    fn name(&self) -> &str {
        "patch-pca"
    }

    fn latent_shape(&self, image: Shape) -> Result<Shape> {
        self.check_image(image)?;
        Ok(Shape::new(image.height / self.patch, image.width / self.patch, self.basis.len()))
    }

    fn encode(&self, image: &Image) -> Result<Image> {
        self.check_image(image.shape())?;
        let ls = self.latent_shape(self.image)?;
        let mut z = Image::zeros(ls);
        let mut v = vec![0.0; self.mean.len()];
        for py in 0..ls.height {
            for px in 0..ls.width {
                gather(image, self.patch, py, px, &mut v);
                for (a, m) in v.iter_mut().zip(&self.mean) {
                    *a -= m;
                }
                for (k, row) in self.basis.iter().enumerate() {
                    z.set(k, py, px, crate::num::dot(row, &v));
                }
            }
        }
        Ok(z)
    }

    fn decode(&self, latent: &Image) -> Result<Image> {
        self.check_latent(latent.shape())?;
        Ok(self.project_back(latent, true))
    }

    fn decode_vjp(&self, latent: &Image, grad_image: &Image) -> Result<Image> {
        self.check_latent(latent.shape())?;
        self.check_image(grad_image.shape())?;
        // the decoder is affine, so its transpose is the encoder without centring
        let ls = latent.shape();
        let mut g = Image::zeros(ls);
        let mut v = vec![0.0; self.mean.len()];
        for py in 0..ls.height {
            for px in 0..ls.width {
                gather(grad_image, self.patch, py, px, &mut v);
                for (k, row) in self.basis.iter().enumerate() {
                    g.set(k, py, px, crate::num::dot(row, &v));
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::psnr;
    use crate::concepts::{synth_concept_image, ConceptId, ConceptStyle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images() -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..12)
            .map(|j| {
                let style = ConceptStyle::for_concept(ConceptId(j % 4), 0);
                synth_concept_image(&style, Shape::new(16, 16, 3), &mut rng)
            })
            .collect()
    }

    #[test]
    fn identity_is_exact() {
        let img = &images()[0];
        let z = IdentityCodec.encode(img).unwrap();
        assert_eq!(psnr(img, &IdentityCodec.decode(&z).unwrap()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn full_rank_patch_codec_reconstructs() {
        let imgs = images();
        let ae = PatchAutoencoder::fit(&imgs, 2, 12).unwrap();
        assert_eq!(ae.latent_shape(imgs[0].shape()).unwrap(), Shape::new(8, 8, 12));
        for img in &imgs {
            let back = ae.decode(&ae.encode(img).unwrap()).unwrap();
            assert!(psnr(img, &back).unwrap() >= 35.0);
        }
    }

    #[test]
    fn reduced_patch_codec_reconstructs_smooth_images() {
        let imgs = images();
        let ae = PatchAutoencoder::fit(&imgs, 2, 6).unwrap();
        for img in &imgs {
            let back = ae.decode(&ae.encode(img).unwrap()).unwrap();
            assert!(psnr(img, &back).unwrap() >= 35.0);
        }
    }

    #[test]
    fn vjp_is_decoder_transpose() {
        let imgs = images();
        let ae = PatchAutoencoder::fit(&imgs, 2, 5).unwrap();
        let z = ae.encode(&imgs[1]).unwrap();
        let gi = Image::from_fn(imgs[0].shape(), |c, y, x| ((c * 31 + y * 5 + x) as f64).cos());
        let gz = ae.decode_vjp(&z, &gi).unwrap();
        // <D(z + dz) - D(z), g> = <dz, D^T g> for an affine decoder
        let dz = Image::from_fn(z.shape(), |c, y, x| ((c + 2 * y + 3 * x) as f64).sin() * 1e-3);
        let mut z2 = z.clone();
        z2.add_scaled(&dz, 1.0).unwrap();
        let d1 = ae.decode(&z).unwrap();
        let d2 = ae.decode(&z2).unwrap();
        let lhs: f64 = d2.data().iter().zip(d1.data()).zip(gi.data()).map(|((a, b), g)| (a - b) * g).sum();
        let rhs: f64 = dz.data().iter().zip(gz.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn save_load_round_trip() {
        let imgs = images();
        let ae = PatchAutoencoder::fit(&imgs, 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ae.txt");
        ae.save(&p).unwrap();
        assert_eq!(PatchAutoencoder::load(&p).unwrap(), ae);
    }
}
