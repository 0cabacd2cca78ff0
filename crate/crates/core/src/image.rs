//! Planar floating-point images on a [0, 1] intensity scale.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

/// Image geometry: `height × width × channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rejects shapes smaller than `min` pixels on a side or without channels.
    pub fn validate(&self, min: usize) -> Result<()> {
        ensure!(
            self.height >= min && self.width >= min && self.channels >= 1,
            InvalidArgument,
            "shape {self} must be at least {min}x{min} with one or more channels"
        );
        Ok(())
    }

    /// Parses `HxW` or `HxWxC` (channels default to 3).
    pub fn parse(s: &str) -> Result<Shape> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        let num = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad shape component {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            [h, w] => Ok(Shape::new(num(h)?, num(w)?, 3)),
            [h, w, c] => Ok(Shape::new(num(h)?, num(w)?, num(c)?)),
            _ => Err(Error::InvalidArgument(format!("shape {s:?} is not HxW or HxWxC"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Channel-planar image: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn filled(shape: Shape, value: f64) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == shape.len(),
            ShapeMismatch,
            "buffer of {} values does not fit shape {shape}",
            data.len()
        );
        Ok(Image { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let w = self.shape.width;
        let h = self.shape.height;
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.shape.channels)
            .map(|c| crate::num::sum(self.channel(c)) / self.shape.plane() as f64)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        crate::num::sum(&self.data) / self.data.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (crate::num::dot(&self.data, &self.data) / self.data.len() as f64).sqrt()
    }

    pub fn clip_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn clipped(mut self) -> Self {
        self.clip_unit();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the window `[y0, y0+h) × [x0, x0+w)` of every channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        ensure!(
            y0 + h <= self.shape.height && x0 + w <= self.shape.width && h > 0 && w > 0,
            ShapeMismatch,
            "window {h}x{w}@({y0},{x0}) outside image {}",
            self.shape
        );
        let shape = Shape::new(h, w, self.shape.channels);
        Ok(Image::from_fn(shape, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    /// Writes `patch` into this image with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, patch: &Image, y0: usize, x0: usize) -> Result<()> {
        let s = patch.shape;
        ensure!(
            s.channels == self.shape.channels
                && y0 + s.height <= self.shape.height
                && x0 + s.width <= self.shape.width,
            ShapeMismatch,
            "patch {s} at ({y0},{x0}) does not fit {}",
            self.shape
        );
        for c in 0..s.channels {
            for y in 0..s.height {
                for x in 0..s.width {
                    self.set(c, y0 + y, x0 + x, patch.get(c, y, x));
                }
            }
        }
        Ok(())
    }

    /// Bilinear resize with pixel-centre alignment (`align_corners = false`).
    ///
    /// Channel counts must agree. Identity targets return an exact copy.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        let src = self.shape;
        if src.height == height && src.width == width {
            return self.clone();
        }
        let dst = Shape::new(height, width, src.channels);
        let ys = axis_taps(src.height, height);
        let xs = axis_taps(src.width, width);
        let mut out = Image::zeros(dst);
        for c in 0..src.channels {
            let plane = self.channel(c);
            let out_plane = out.channel_mut(c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &plane[y0 * src.width..(y0 + 1) * src.width];
                let r1 = &plane[y1 * src.width..(y1 + 1) * src.width];
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    out_plane[oy * width + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Image, scale: f64) -> Result<()> {
        ensure!(
            self.shape == other.shape,
            ShapeMismatch,
            "cannot add {} to {}",
            other.shape,
            self.shape
        );
        crate::num::axpy(scale, &other.data, &mut self.data);
        Ok(())
    }

    /// Luminance plane (Rec. 601 weights for RGB; the first channel otherwise).
    pub fn luminance(&self) -> Vec<f64> {
        if self.shape.channels >= 3 {
            let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
            r.iter()
                .zip(g)
                .zip(b)
                .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
                .collect()
        } else {
            self.channel(0).to_vec()
        }
    }

    /// Writes a binary 16-bit PPM (3 channels) or PGM (1 channel).
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let s = self.shape;
        let magic = match s.channels {
            1 => "P5",
            3 => "P6",
            c => {
                return Err(Error::InvalidArgument(format!(
                    "PNM output needs 1 or 3 channels, image has {c}"
                )))
            }
        };
        let mut buf = Vec::with_capacity(s.len() * 2 + 32);
        write!(buf, "{magic}\n{} {}\n65535\n", s.width, s.height).expect("vec write");
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..s.channels {
                    let q = (self.get(c, y, x).clamp(0.0, 1.0) * 65535.0).round() as u16;
                    buf.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a binary PPM/PGM with 8- or 16-bit samples.
    pub fn read_pnm(path: &Path) -> Result<Image> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |d: &str| Error::format("PNM image", path, d.to_string());
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                return Err(bad("truncated header"));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let channels = match tokens[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(bad(&format!("unsupported magic {m}"))),
        };
        let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("non-numeric header field"));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        let wide = maxval > 255;
        let shape = Shape::new(height, width, channels);
        let mut raw = vec![0u8; shape.len() * if wide { 2 } else { 1 }];
        r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
        let scale = maxval as f64;
        let mut img = Image::zeros(shape);
        let mut k = 0;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = if wide {
                        u16::from_be_bytes([raw[2 * k], raw[2 * k + 1]]) as f64
                    } else {
                        raw[k] as f64
                    };
                    img.set(c, y, x, v / scale);
                    k += 1;
                }
            }
        }
        Ok(img)
    }
}

/// Source indices and weight for each output coordinate along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Mean squared difference between two equally-shaped images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure!(
        a.shape == b.shape,
        ShapeMismatch,
        "cannot compare {} with {}",
        a.shape,
        b.shape
    );
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_parse() {
        assert_eq!(Shape::parse("32x32").unwrap(), Shape::new(32, 32, 3));
        assert_eq!(Shape::parse("8x16x1").unwrap(), Shape::new(8, 16, 1));
        assert!(Shape::parse("8").is_err());
        assert!(Shape::parse("axb").is_err());
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = Image::from_fn(Shape::new(9, 7, 2), |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(img.resize_bilinear(9, 7), img);
    }

    #[test]
    fn resize_preserves_constants_and_linear_ramps() {
        let img = Image::filled(Shape::new(8, 8, 3), 0.25);
        let up = img.resize_bilinear(16, 24);
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        // a horizontal ramp stays a ramp in the interior after 2x upsampling
        let ramp = Image::from_fn(Shape::new(4, 8, 1), |_, _, x| x as f64);
        let up = ramp.resize_bilinear(4, 16);
        for x in 1..15 {
            let expect = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.get(0, 2, x) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_and_paste_round_trip() {
        let img = Image::from_fn(Shape::new(6, 10, 3), |c, y, x| (c + y * x) as f64);
        let left = img.crop(0, 0, 6, 5).unwrap();
        let right = img.crop(0, 5, 6, 5).unwrap();
        let mut out = Image::zeros(img.shape());
        out.paste(&left, 0, 0).unwrap();
        out.paste(&right, 0, 5).unwrap();
        assert_eq!(out, img);
        assert!(img.crop(0, 6, 6, 5).is_err());
    }

    #[test]
    fn pnm_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = Image::from_fn(Shape::new(5, 7, channels), |c, y, x| {
                ((c * 7 + y * 3 + x) % 11) as f64 / 10.0
            });
            let path = dir.path().join(format!("img{channels}.pnm"));
            img.write_pnm(&path).unwrap();
            let back = Image::read_pnm(&path).unwrap();
            assert_eq!(back.shape(), img.shape());
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }
}
