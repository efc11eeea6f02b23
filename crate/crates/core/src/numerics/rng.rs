//! Splittable deterministic RNG.
//!
//! Every stream is identified by a 64-bit key; child streams are derived by
//! hashing the parent key with a label (and optional index), never from the
//! parent's consumed state. Subsystems can therefore draw in any order
//! without perturbing each other, which is what makes run traces replayable.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic, label-splittable random stream (ChaCha12 core).
pub struct Rng {
    key: u64,
    core: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::from_key(splitmix64(seed))
    }

    fn from_key(key: u64) -> Self {
        // Expand the 64-bit key into the full 256-bit ChaCha seed.
        let mut seed = [0u8; 32];
        let mut z = key;
        for chunk in seed.chunks_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self {
            key,
            core: ChaCha12Rng::from_seed(seed),
        }
    }

    /// Child stream for a named subsystem. Depends only on the parent key
    /// and the label, not on how much the parent has drawn.
    pub fn stream(&self, label: &str) -> Rng {
        Rng::from_key(splitmix64(self.key ^ fnv1a64(label.as_bytes())))
    }

    /// Indexed child stream (per-seed, per-member, per-phase, ...).
    pub fn stream_n(&self, label: &str, index: u64) -> Rng {
        Rng::from_key(splitmix64(
            self.key ^ fnv1a64(label.as_bytes()) ^ splitmix64(index.wrapping_add(0x5851f42d)),
        ))
    }

    pub fn u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn f64(&mut self) -> f64 {
        self.core.gen::<f64>()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.f64()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.core.sample(rand_distr::StandardNormal)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn usize_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.core.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.usize_below(i + 1);
            xs.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.core.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.core.try_fill_bytes(dest)
    }
}
