//! Portable deterministic randomness.
//!
//! Every random choice in the pipeline flows through [`SplitMix64`] streams
//! derived from `(global_seed, purpose, labels...)` via [`stable_hash64`].
//! Deriving one stream per class (rather than one global stream) keeps
//! per-class selections independent of class iteration order, so adding a
//! class never reshuffles another class's draws.

use sha2::{Digest, Sha256};

/// Domain-separated stable 64-bit hash.
///
/// Parts are length-prefixed before hashing so `("ab","c")` and `("a","bc")`
/// never collide. Output is the first 8 bytes of SHA-256, little-endian,
/// identical on every platform and release.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// SplitMix64 generator (Steele, Lea & Flood; the reference constants).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Stream keyed by a seed plus arbitrary byte labels, e.g.
    /// `SplitMix64::stream(seed, &[b"fewshot", class.as_bytes()])`.
    pub fn stream(seed: u64, labels: &[&[u8]]) -> Self {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(labels.len() + 1);
        let seed_bytes = seed.to_le_bytes();
        parts.push(&seed_bytes);
        parts.extend_from_slice(labels);
        SplitMix64::new(stable_hash64(&parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Unbiased draw from `0..n` (Lemire's multiply-shift with rejection).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Partial Fisher–Yates: draw `k` distinct indices from `0..n`,
    /// returned sorted ascending.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} from {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    /// Draw an index from a discrete distribution given as probabilities.
    /// The caller guarantees the weights sum to ~1; the final atom absorbs
    /// floating-point slack.
    pub fn next_categorical(&mut self, probs: &[f64]) -> usize {
        debug_assert!(!probs.is_empty());
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}
