//! Hadamard matrices from Sylvester doubling and the Paley I construction.

/// Largest Hadamard order `n ≤ limit` reachable as `2^k · (q + 1)` with
/// `q` a prime `≡ 3 (mod 4)`, or `2^k`.
pub fn largest_order(limit: usize) -> Option<usize> {
    let mut best = None;
    let mut bases = vec![1usize];
    bases.extend((3..=limit).filter(|&q| q % 4 == 3 && is_prime(q)).map(|q| q + 1));
    for base in bases {
        let mut n = base;
        while n <= limit {
            best = best.max(Some(n));
            n *= 2;
        }
    }
    best
}

/// Hadamard matrix of order `n` as rows of `±1`, or `None` if `n` is not
/// reachable by [`largest_order`]'s constructions.
pub fn hadamard(n: usize) -> Option<Vec<Vec<i8>>> {
    if n == 0 {
        return None;
    }
    let mut base = n;
    let mut doublings = 0;
    while base % 2 == 0 && !(base >= 4 && is_prime(base - 1) && (base - 1) % 4 == 3) {
        base /= 2;
        doublings += 1;
    }
    let mut h = match base {
        1 => vec![vec![1i8]],
        b if b >= 4 && is_prime(b - 1) && (b - 1) % 4 == 3 => paley(b - 1),
        _ => return None,
    };
    for _ in 0..doublings {
        h = sylvester_double(&h);
    }
    Some(h)
}

fn sylvester_double(h: &[Vec<i8>]) -> Vec<Vec<i8>> {
    let mut out = Vec::with_capacity(h.len() * 2);
    for row in h {
        out.push(row.iter().chain(row.iter()).copied().collect());
    }
    for row in h {
        out.push(row.iter().copied().chain(row.iter().map(|v| -v)).collect());
    }
    out
}

/// Paley I: order `q + 1` for prime `q ≡ 3 (mod 4)`.
fn paley(q: usize) -> Vec<Vec<i8>> {
    let mut residue = vec![false; q];
    for x in 1..q {
        residue[(x * x) % q] = true;
    }
    let chi = |a: usize| -> i8 {
        if a == 0 {
            0
        } else if residue[a] {
            1
        } else {
            -1
        }
    };
    let n = q + 1;
    let mut h = vec![vec![0i8; n]; n];
    for j in 0..n {
        h[0][j] = 1;
    }
    for i in 1..n {
        h[i][0] = -1;
        for j in 1..n {
            // Jacobsthal entry plus identity
            let q_ij = chi((j + q - i) % q);
            h[i][j] = if i == j { 1 } else { q_ij };
        }
    }
    h
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}
