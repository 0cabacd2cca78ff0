use crate::error::{ensure, Result};
use crate::image::{mse, Image};

/// PSNR in decibels on the `[0, 1]` scale; identical inputs give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * e.log10())
}

/// Cosine similarity of two equally-shaped images viewed as vectors.
pub fn cosine(a: &Image, b: &Image) -> Result<f64> {
    ensure!(
        a.shape() == b.shape(),
        ShapeMismatch,
        "cannot compare {} with {}",
        a.shape(),
        b.shape()
    );
    let (x, y) = (a.data(), b.data());
    let denom = (crate::num::dot(x, x) * crate::num::dot(y, y)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(crate::num::dot(x, y) / denom)
}
