//! Deterministic point sets for verification grids.

use rand::Rng;

use crate::linalg::Vector;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// The first `n` Halton points of [-r, r]^d that fall in the closed Euclidean r-ball.
pub fn halton_ball(n: usize, d: usize, r: f64) -> Vec<Vector> {
    assert!(d <= PRIMES.len(), "halton_ball supports d <= {}", PRIMES.len());
    let mut out = Vec::with_capacity(n);
    let mut index = 1u64;
    while out.len() < n {
        let p = Vector::from_fn(d, |k, _| 2.0 * halton(index, PRIMES[k]) - 1.0);
        index += 1;
        if p.norm_squared() <= 1.0 {
            out.push(p * r);
        }
    }
    out
}

/// Uniform sample of the closed r-ball.
pub fn uniform_ball<R: Rng>(rng: &mut R, d: usize, r: f64) -> Vector {
    loop {
        let p = Vector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
        if p.norm_squared() <= 1.0 {
            return p * r;
        }
    }
}
