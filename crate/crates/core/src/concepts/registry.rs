use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::Secret;
use crate::error::{ensure, Error, Result};

use super::hadamard;

/// Largest registry the codebook supports.
pub const MAX_CONCEPTS: usize = 1 << 16;

/// Above this size distance checks switch from all pairs to block indexing.
const BRUTE_FORCE_LIMIT: usize = 4096;

const MAX_RESAMPLE_ROUNDS: usize = 64;

/// Index of a concept within a registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(pub usize);

impl std::fmt::Display for ConceptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codebook {
    /// Rows of a scrambled Hadamard matrix: every pair differs in exactly
    /// `n/2` of the first `n` positions, so watermarks are near-orthogonal.
    Orthogonal,
    /// Independent uniform codewords, resampled until the distance target holds.
    Random,
}

/// Bijection between concepts and their secrets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegistry {
    bits: usize,
    seed: u64,
    codebook: Codebook,
    secrets: Vec<Secret>,
    /// Certified lower bound on pairwise Hamming distance. Exact minimum when
    /// the registry was small enough to check all pairs.
    min_hamming: usize,
}

/// Pairwise distance target: `max(8, b/8)`.
pub fn distance_target(bits: usize) -> usize {
    8.max(bits / 8)
}

/// Assigns one secret per concept, preferring an orthogonal codebook whenever
/// a Hadamard matrix with at least `n` rows fits into `b` bits.
pub fn assign_secrets(n: usize, bits: usize, seed: u64) -> Result<ConceptRegistry> {
    let kind = match hadamard::largest_order(bits) {
        Some(order) if n <= order && order >= bits / 2 => Codebook::Orthogonal,
        _ => Codebook::Random,
    };
    assign_secrets_with(n, bits, seed, kind)
}

pub fn assign_secrets_with(n: usize, bits: usize, seed: u64, codebook: Codebook) -> Result<ConceptRegistry> {
    ensure!(n >= 1, InvalidArgument, "registry needs at least one concept");
    ensure!(bits >= 16, InvalidArgument, "secrets need at least 16 bits, got {bits}");
    ensure!(
        n <= MAX_CONCEPTS,
        InvalidArgument,
        "{n} concepts exceeds the supported maximum of {MAX_CONCEPTS}"
    );
    let target = distance_target(bits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let secrets = match codebook {
        Codebook::Orthogonal => orthogonal_codewords(n, bits, &mut rng)?,
        Codebook::Random => random_codewords(n, bits, target, &mut rng)?,
    };
    let min_hamming = if n <= BRUTE_FORCE_LIMIT {
        exact_min_distance(&secrets).unwrap_or(bits)
    } else {
        target
    };
    ensure!(
        min_hamming >= target,
        Infeasible,
        "codebook minimum distance {min_hamming} below target {target}"
    );
    Ok(ConceptRegistry {
        bits,
        seed,
        codebook,
        secrets,
        min_hamming,
    })
}

fn orthogonal_codewords(n: usize, bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Secret>> {
    let order = hadamard::largest_order(bits).ok_or_else(|| Error::Infeasible(format!("no Hadamard order ≤ {bits}")))?;
    ensure!(
        n <= order,
        Infeasible,
        "orthogonal codebook of order {order} cannot hold {n} concepts"
    );
    let h = hadamard::hadamard(order).expect("order from largest_order is constructible");
    let mut rows: Vec<usize> = (0..order).collect();
    rows.shuffle(rng);
    let mut cols: Vec<usize> = (0..bits).collect();
    cols.shuffle(rng);
    let mask = Secret::random(bits, rng);
    let out = rows[..n]
        .iter()
        .map(|&r| {
            let mut s = Secret::zeros(bits);
            for (k, &col) in cols.iter().enumerate() {
                let bit = if k < order { h[r][k] < 0 } else { rng.random::<bool>() };
                s.set(col, bit ^ mask.bit(col));
            }
            s
        })
        .collect();
    Ok(out)
}

fn random_codewords(n: usize, bits: usize, target: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Secret>> {
    if !hamming_bound_allows(n, bits, target) {
        return Err(Error::Infeasible(format!(
            "{n} codewords of {bits} bits cannot all be {target} apart"
        )));
    }
    let mut secrets: Vec<Secret> = (0..n).map(|_| Secret::random(bits, rng)).collect();
    for _ in 0..MAX_RESAMPLE_ROUNDS {
        let bad = close_pairs(&secrets, target);
        if bad.is_empty() {
            return Ok(secrets);
        }
        let mut redraw: Vec<usize> = bad.into_iter().map(|(_, j)| j).collect();
        redraw.sort_unstable();
        redraw.dedup();
        for j in redraw {
            secrets[j] = Secret::random(bits, rng);
        }
    }
    Err(Error::Infeasible(format!(
        "could not place {n} codewords {target} apart in {bits} bits after {MAX_RESAMPLE_ROUNDS} rounds"
    )))
}

/// Sphere-packing check: `n · V(b, ⌊(d−1)/2⌋) ≤ 2^b`, in log space.
fn hamming_bound_allows(n: usize, bits: usize, distance: usize) -> bool {
    let radius = distance.saturating_sub(1) / 2;
    let mut log_binom = 0.0f64; // ln C(bits, 0)
    let mut terms = vec![0.0f64];
    for k in 1..=radius {
        log_binom += ((bits - k + 1) as f64).ln() - (k as f64).ln();
        terms.push(log_binom);
    }
    let max = terms.iter().cloned().fold(f64::MIN, f64::max);
    let log_volume = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    (n as f64).ln() + log_volume <= bits as f64 * std::f64::consts::LN_2 + 1e-9
}

/// All pairs `(i, j)`, `i < j`, at distance below `target`.
///
/// For large codebooks this splits the bits into `target` blocks: a pair
/// closer than `target` must agree exactly on at least one block, so only
/// pairs sharing a block value are compared.
pub fn close_pairs(secrets: &[Secret], target: usize) -> Vec<(usize, usize)> {
    let n = secrets.len();
    let mut out = Vec::new();
    if n < 2 || target == 0 {
        return out;
    }
    let bits = secrets[0].len();
    if n <= BRUTE_FORCE_LIMIT || target > bits {
        for j in 1..n {
            for i in 0..j {
                if secrets[i].hamming_unchecked(&secrets[j]) < target {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let blocks = target;
    let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(n);
    for blk in 0..blocks {
        let start = blk * bits / blocks;
        let end = (blk + 1) * bits / blocks;
        keyed.clear();
        keyed.extend(secrets.iter().enumerate().map(|(i, s)| (s.field(start, end - start), i as u32)));
        keyed.sort_unstable();
        let mut g = 0;
        while g < keyed.len() {
            let mut e = g + 1;
            while e < keyed.len() && keyed[e].0 == keyed[g].0 {
                e += 1;
            }
            for a in g..e {
                for b in a + 1..e {
                    let (i, j) = (keyed[a].1 as usize, keyed[b].1 as usize);
                    if secrets[i].hamming_unchecked(&secrets[j]) < target {
                        out.push((i.min(j), i.max(j)));
                    }
                }
            }
            g = e;
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn exact_min_distance(secrets: &[Secret]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for j in 1..secrets.len() {
        for i in 0..j {
            let d = secrets[i].hamming_unchecked(&secrets[j]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Summary of a random-pair distance audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceAudit {
    pub pairs: usize,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl ConceptRegistry {
    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codebook(&self) -> Codebook {
        self.codebook
    }

    pub fn min_hamming(&self) -> usize {
        self.min_hamming
    }

    pub fn secrets(&self) -> &[Secret] {
        &self.secrets
    }

    pub fn secret(&self, id: ConceptId) -> &Secret {
        &self.secrets[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.secrets.len()).map(ConceptId)
    }

    /// Builds a registry from explicit secrets (for example a secrets file),
    /// verifying the distance target.
    pub fn from_secrets(secrets: Vec<Secret>, seed: u64) -> Result<Self> {
        ensure!(!secrets.is_empty(), InvalidArgument, "registry needs at least one secret");
        let bits = secrets[0].len();
        ensure!(
            secrets.iter().all(|s| s.len() == bits),
            ShapeMismatch,
            "secrets have differing lengths"
        );
        let target = distance_target(bits);
        let close = close_pairs(&secrets, target);
        ensure!(
            close.is_empty(),
            Infeasible,
            "{} secret pairs are closer than {target} bits, first {:?}",
            close.len(),
            close[0]
        );
        let min_hamming = if secrets.len() <= BRUTE_FORCE_LIMIT {
            exact_min_distance(&secrets).unwrap_or(bits)
        } else {
            target
        };
        Ok(ConceptRegistry {
            bits,
            seed,
            codebook: Codebook::Random,
            secrets,
            min_hamming,
        })
    }

    /// Builds a registry without enforcing the distance target.
    pub fn from_secrets_unchecked(secrets: Vec<Secret>, seed: u64) -> Result<Self> {
        ensure!(!secrets.is_empty(), InvalidArgument, "registry needs at least one secret");
        let bits = secrets[0].len();
        ensure!(
            secrets.iter().all(|s| s.len() == bits),
            ShapeMismatch,
            "secrets have differing lengths"
        );
        let min_hamming = exact_min_distance(&secrets).unwrap_or(bits);
        Ok(ConceptRegistry {
            bits,
            seed,
            codebook: Codebook::Random,
            secrets,
            min_hamming,
        })
    }

    /// Distances of `pairs` uniformly drawn distinct pairs.
    pub fn sample_audit(&self, pairs: usize, seed: u64) -> Option<DistanceAudit> {
        let n = self.secrets.len();
        if n < 2 || pairs == 0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut min, mut max, mut total) = (usize::MAX, 0, 0usize);
        for _ in 0..pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let d = self.secrets[i].hamming_unchecked(&self.secrets[j]);
            min = min.min(d);
            max = max.max(d);
            total += d;
        }
        Some(DistanceAudit {
            pairs,
            min,
            max,
            mean: total as f64 / pairs as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_concepts_far_apart() {
        let r = assign_secrets(2, 160, 1).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.secret(ConceptId(0)).hamming(r.secret(ConceptId(1))).unwrap() >= 20);
    }

    #[test]
    fn single_concept_is_valid() {
        let r = assign_secrets(1, 160, 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.min_hamming(), 160);
    }

    #[test]
    fn orthogonal_codebook_is_exactly_balanced() {
        let r = assign_secrets(100, 160, 42).unwrap();
        assert_eq!(r.codebook(), Codebook::Orthogonal);
        for j in 1..100 {
            for i in 0..j {
                assert_eq!(r.secrets()[i].hamming(&r.secrets()[j]).unwrap(), 80);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(assign_secrets(50, 160, 9).unwrap(), assign_secrets(50, 160, 9).unwrap());
        assert_ne!(assign_secrets(50, 160, 9).unwrap(), assign_secrets(50, 160, 10).unwrap());
        let a = assign_secrets_with(300, 64, 3, Codebook::Random).unwrap();
        assert_eq!(a, assign_secrets_with(300, 64, 3, Codebook::Random).unwrap());
    }

    #[test]
    fn random_codebook_meets_target() {
        let r = assign_secrets_with(500, 32, 5, Codebook::Random).unwrap();
        assert!(r.min_hamming() >= distance_target(32));
        assert!(close_pairs(r.secrets(), 8).is_empty());
    }

    #[test]
    fn infeasible_targets_fail() {
        // 16-bit codewords 8 apart: the sphere-packing bound allows at most 2^16/137
        assert!(matches!(
            assign_secrets_with(1000, 16, 1, Codebook::Random),
            Err(Error::Infeasible(_))
        ));
        assert!(assign_secrets(0, 160, 1).is_err());
        assert!(assign_secrets(4, 8, 1).is_err());
        assert!(assign_secrets(MAX_CONCEPTS + 1, 160, 1).is_err());
    }

    #[test]
    fn block_index_finds_the_same_pairs_as_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        // short codewords so close pairs actually occur
        let secrets: Vec<Secret> = (0..5000).map(|_| Secret::random(40, &mut rng)).collect();
        let fast = close_pairs(&secrets, 9);
        let mut slow = Vec::new();
        for j in 1..secrets.len() {
            for i in 0..j {
                if secrets[i].hamming_unchecked(&secrets[j]) < 9 {
                    slow.push((i, j));
                }
            }
        }
        slow.sort_unstable();
        assert!(!slow.is_empty());
        assert_eq!(fast, slow);
    }

    #[test]
    fn from_secrets_rejects_close_pairs() {
        let a = Secret::zeros(32);
        let mut b = a.clone();
        b.flip(3);
        assert!(ConceptRegistry::from_secrets(vec![a.clone(), b], 0).is_err());
        let r = ConceptRegistry::from_secrets(vec![a.clone(), a.complement()], 0).unwrap();
        assert_eq!(r.min_hamming(), 32);
    }
}
