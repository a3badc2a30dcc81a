//! Small numeric building blocks shared across modules: compensated summation,
//! the portable random streams used by every resampling and shuffling routine,
//! and the stable id hash that seeds per-trace permutations.
//!
//! # Random streams
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), which produces the same
//! output on every platform. A stream is identified by `(seed, index)`:
//! the generator is seeded with `ChaCha8Rng::seed_from_u64(seed)` and then
//! switched to stream number `index` with `set_stream(index)`. Bootstrap
//! resample `i`, synthetic trace `i` and theory trial `i` each own stream `i`,
//! so results never depend on scheduling or worker count.
//!
//! Derived draws:
//!
//! - unit interval: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`
//! - index below `n`: `(next_u64() as u128 * n) >> 64` (multiply-shift)
//! - permutation of `n` items: Fisher-Yates from the back; for `i = n-1 .. 1`,
//!   swap `i` with `index_below(i + 1)`
//!
//! # Id hash
//!
//! Per-trace shuffles are seeded with 64-bit FNV-1a over the 8 little-endian
//! bytes of the corpus seed followed by the UTF-8 bytes of the trace id.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Generator for stream `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: RngCore>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Index in `0..n` by multiply-shift. `n` must be positive.
pub fn index_below<R: RngCore>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Fisher-Yates permutation of `0..n`; `perm[new_position] = old_position`.
pub fn permutation<R: RngCore>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = index_below(rng, i + 1);
        perm.swap(i, j);
    }
    perm
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Stable hash of `(corpus seed, trace id)` used to seed per-trace shuffles.
pub fn trace_hash(seed: u64, id: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + id.len());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(id.as_bytes());
    fnv1a64(&buf)
}

/// Linear-interpolation quantile of an ascending slice (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Largest-remainder split of `n` items by `shares` (which sum to 1).
pub fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
