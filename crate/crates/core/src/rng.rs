//! Seeded randomness.
//!
//! `Rng` wraps ChaCha8, a counter-based generator: a `(seed, stream)` pair
//! fully determines the output on every platform, so per-user work can run on
//! any thread in any order and still reproduce.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::stream(seed, 0)
    }

    /// An independent stream derived from `seed`; use one per user or task.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Draws up to `k` distinct ids; each draw picks among the remaining items
/// with probability proportional to weight. Zero-weight items are never drawn.
pub fn weighted_sample_without_replacement<T: Copy>(
    items: &[(T, f64)],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if let Some(&(_, w)) = items.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeight(w));
    }
    let mut pool: Vec<(T, f64)> = items.iter().copied().filter(|(_, w)| *w > 0.0).collect();
    if pool.is_empty() {
        return Err(Error::AllZeroWeights);
    }

    let take = k.min(pool.len());
    let mut out = Vec::with_capacity(take);
    for _ in 0..take {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut target = rng.uniform() * total;
        // Rounding can leave `target` past the last bucket; fall back to it.
        let mut pick = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        out.push(pool.remove(pick).0);
    }
    Ok(out)
}
