use std::borrow::Cow;

use crate::error::{ensure, Result};
use crate::image::{Image, Shape};
use crate::num;
use crate::parallel::{self, Exec};

use super::bank::CarrierBank;
use super::embed::Split;
use super::secret::Secret;

/// Brings `image` to the bank's geometry: bilinear resize, and channel `c`
/// of the bank reads channel `c mod channels` of the image.
fn conform<'a>(image: &'a Image, bank: &CarrierBank) -> Cow<'a, Image> {
    let want = bank.shape();
    let have = image.shape();
    if have == want {
        return Cow::Borrowed(image);
    }
    let resized = if have.height != want.height || have.width != want.width {
        Cow::Owned(image.resize_bilinear(want.height, want.width))
    } else {
        Cow::Borrowed(image)
    };
    if resized.shape().channels == want.channels {
        return resized;
    }
    let src = resized.shape().channels;
    Cow::Owned(Image::from_fn(want, |c, y, x| resized.get(c % src, y, x)))
}

/// Per-channel mean-removed copy of the image.
fn centred(image: &Image) -> Vec<f64> {
    let shape = image.shape();
    let means = image.channel_means();
    let plane = shape.plane();
    let mut out = image.data().to_vec();
    for (c, mean) in means.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v -= mean;
        }
    }
    out
}

/// Mean product of the centred image with every carrier.
pub fn correlations(image: &Image, bank: &CarrierBank) -> Vec<f64> {
    let img = conform(image, bank);
    let x = centred(&img);
    let n = x.len() as f64;
    (0..bank.bits()).map(|i| num::dot(&x, bank.carrier(i)) / n).collect()
}

/// Soft bit estimates `logistic(k · corr_i)` in `(0, 1)`.
pub fn decode_soft(image: &Image, bank: &CarrierBank) -> Vec<f64> {
    let k = bank.gain();
    correlations(image, bank).into_iter().map(|c| num::logistic(k * c)).collect()
}

/// Thresholds soft bits at 0.5; an exact tie decodes to 0.
pub fn decode_hard(image: &Image, bank: &CarrierBank) -> Secret {
    threshold(&decode_soft(image, bank))
}

pub fn threshold(soft: &[f64]) -> Secret {
    Secret::from_bools(soft.iter().map(|&p| p > 0.5))
}

/// Vector-Jacobian product of [`decode_soft`]: maps `∂L/∂soft` to `∂L/∂image`.
///
/// The image must already have the bank's shape.
pub fn decode_soft_vjp(image: &Image, bank: &CarrierBank, grad_soft: &[f64]) -> Result<Image> {
    ensure!(
        image.shape() == bank.shape(),
        ShapeMismatch,
        "gradient needs image {} to match bank {}",
        image.shape(),
        bank.shape()
    );
    ensure!(
        grad_soft.len() == bank.bits(),
        ShapeMismatch,
        "{} soft-bit gradients for a {}-bit bank",
        grad_soft.len(),
        bank.bits()
    );
    let soft = decode_soft(image, bank);
    let k = bank.gain();
    let n = bank.shape().len() as f64;
    let mut grad = vec![0.0; bank.shape().len()];
    for (i, (&g, &p)) in grad_soft.iter().zip(&soft).enumerate() {
        let coef = g * p * (1.0 - p) * k / n;
        if coef != 0.0 {
            num::axpy(coef, bank.carrier(i), &mut grad);
        }
    }
    // mean removal projects the gradient onto per-channel zero-mean images
    let mut grad = Image::from_vec(bank.shape(), grad)?;
    let means = grad.channel_means();
    for (c, m) in means.iter().enumerate() {
        for v in grad.channel_mut(c) {
            *v -= m;
        }
    }
    Ok(grad)
}

/// Hard-decodes a batch of images.
pub fn decode_batch(exec: Exec, images: &[Image], bank: &CarrierBank) -> Vec<Secret> {
    parallel::map_slice(exec, images, |img| decode_hard(img, bank))
}

/// Pair of half-resolution banks for decoding dual-watermarked images.
#[derive(Debug, Clone)]
pub struct DualBank {
    pub split: Split,
    pub shape: Shape,
    pub first: CarrierBank,
    pub second: CarrierBank,
}

impl DualBank {
    pub fn new(bank: &CarrierBank, shape: Shape, split: Split) -> Result<Self> {
        let [a, b] = split.regions(shape);
        Ok(DualBank {
            split,
            shape,
            first: bank.resized(Shape::new(a.2, a.3, shape.channels))?,
            second: bank.resized(Shape::new(b.2, b.3, shape.channels))?,
        })
    }

    /// Crops the two halves of `image` (resized to the bank's full shape first).
    pub fn halves(&self, image: &Image) -> Result<[Image; 2]> {
        let img = if image.shape().height != self.shape.height || image.shape().width != self.shape.width {
            Cow::Owned(image.resize_bilinear(self.shape.height, self.shape.width))
        } else {
            Cow::Borrowed(image)
        };
        let [a, b] = self.split.regions(self.shape);
        Ok([img.crop(a.0, a.1, a.2, a.3)?, img.crop(b.0, b.1, b.2, b.3)?])
    }

    pub fn decode_soft(&self, image: &Image) -> Result<[Vec<f64>; 2]> {
        let [a, b] = self.halves(image)?;
        Ok([decode_soft(&a, &self.first), decode_soft(&b, &self.second)])
    }

    pub fn decode_hard(&self, image: &Image) -> Result<[Secret; 2]> {
        let [a, b] = self.decode_soft(image)?;
        Ok([threshold(&a), threshold(&b)])
    }

    /// Gradient of a loss on both halves' soft bits with respect to the full image.
    pub fn decode_soft_vjp(&self, image: &Image, grads: [&[f64]; 2]) -> Result<Image> {
        let [ha, hb] = self.halves(image)?;
        ensure!(
            image.shape() == self.shape,
            ShapeMismatch,
            "gradient needs image {} to match dual bank {}",
            image.shape(),
            self.shape
        );
        let [ra, rb] = self.split.regions(self.shape);
        let mut out = Image::zeros(self.shape);
        out.paste(&decode_soft_vjp(&ha, &self.first, grads[0])?, ra.0, ra.1)?;
        out.paste(&decode_soft_vjp(&hb, &self.second, grads[1])?, rb.0, rb.1)?;
        Ok(out)
    }
}

/// Single-bank or dual-bank decoding behind one interface.
///
/// Soft bits and their gradients are carried as one vector per watermark.
#[derive(Debug, Clone)]
pub enum SecretDecoder {
    Single(CarrierBank),
    Dual(DualBank),
}

impl SecretDecoder {
    pub fn bank(&self) -> &CarrierBank {
        match self {
            SecretDecoder::Single(b) => b,
            SecretDecoder::Dual(d) => &d.first,
        }
    }

    /// Number of watermarks decoded from one image.
    pub fn arity(&self) -> usize {
        match self {
            SecretDecoder::Single(_) => 1,
            SecretDecoder::Dual(_) => 2,
        }
    }

    pub fn decode_soft(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        match self {
            SecretDecoder::Single(b) => Ok(vec![decode_soft(image, b)]),
            SecretDecoder::Dual(d) => Ok(d.decode_soft(image)?.into()),
        }
    }

    pub fn decode_hard(&self, image: &Image) -> Result<Vec<Secret>> {
        Ok(self.decode_soft(image)?.iter().map(|s| threshold(s)).collect())
    }

    pub fn decode_soft_vjp(&self, image: &Image, grads: &[Vec<f64>]) -> Result<Image> {
        ensure!(
            grads.len() == self.arity(),
            ShapeMismatch,
            "{} gradient vectors for {} watermarks",
            grads.len(),
            self.arity()
        );
        match self {
            SecretDecoder::Single(b) => decode_soft_vjp(image, b, &grads[0]),
            SecretDecoder::Dual(d) => d.decode_soft_vjp(image, [&grads[0], &grads[1]]),
        }
    }
}
