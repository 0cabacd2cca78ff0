use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{ensure, Error, Result};

/// Fixed-length bit sequence identifying one concept.
///
/// Bits are packed little-endian into 64-bit words so Hamming distances over
/// large codebooks reduce to popcounts.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Secret {
    len: usize,
    words: Vec<u64>,
}

impl Secret {
    pub fn zeros(len: usize) -> Self {
        Secret {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self::zeros(len);
        for i in 0..len {
            s.set(i, true);
        }
        s
    }

    /// Builds a secret from `0`/`1` values; anything else is rejected.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            ensure!(b <= 1, InvalidArgument, "bit {i} has value {b}, expected 0 or 1");
            s.set(i, b == 1);
        }
        Ok(s)
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut s = Self::zeros(bits.len());
        for (i, b) in bits.into_iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(len);
        for w in &mut s.words {
            *w = rng.random();
        }
        s.mask_tail();
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for {}-bit secret", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit index {i} out of range for {}-bit secret", self.len);
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.bit(i);
        self.set(i, !v);
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.bit(i))
    }

    /// `+1` for a set bit, `-1` otherwise.
    pub fn signs(&self) -> Vec<f64> {
        self.bits().map(|b| if b { 1.0 } else { -1.0 }).collect()
    }

    /// Bits as `0.0`/`1.0` targets.
    pub fn targets(&self) -> Vec<f64> {
        self.bits().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn complement(&self) -> Self {
        let mut s = self.clone();
        for w in &mut s.words {
            *w = !*w;
        }
        s.mask_tail();
        s
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of differing positions.
    pub fn hamming(&self, other: &Secret) -> Result<usize> {
        ensure!(
            self.len == other.len,
            ShapeMismatch,
            "secret lengths differ: {} vs {}",
            self.len,
            other.len
        );
        Ok(self.hamming_unchecked(other))
    }

    #[inline]
    pub(crate) fn hamming_unchecked(&self, other: &Secret) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Bits `[start, start+width)` as an integer (`width ≤ 64`).
    pub(crate) fn field(&self, start: usize, width: usize) -> u64 {
        debug_assert!(width <= 64 && start + width <= self.len);
        let mut v = 0u64;
        for k in 0..width {
            if self.bit(start + k) {
                v |= 1 << k;
            }
        }
        v
    }

    fn mask_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    /// Parses a line of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        ensure!(!s.is_empty(), InvalidArgument, "empty secret");
        let mut out = Self::zeros(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => out.set(i, true),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "secret character {other:?} at position {i} is not 0 or 1"
                    )))
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({self})")
    }
}

/// Writes one secret per line.
pub fn write_secrets(path: &Path, secrets: &[Secret]) -> Result<()> {
    let mut text = String::with_capacity(secrets.len() * (secrets.first().map_or(0, |s| s.len()) + 1));
    for s in secrets {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a secrets file; blank lines are skipped and all lengths must agree.
pub fn read_secrets(path: &Path) -> Result<Vec<Secret>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Secret> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = Secret::parse(line)
            .map_err(|e| Error::format("secrets file", path, format!("line {}: {e}", n + 1)))?;
        if let Some(first) = out.first() {
            if first.len() != s.len() {
                return Err(Error::format(
                    "secrets file",
                    path,
                    format!("line {} has {} bits, expected {}", n + 1, s.len(), first.len()),
                ));
            }
        }
        out.push(s);
    }
    Ok(out)
}
