//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of `(master seed, purpose, indices)`. Streams are independent of
//! evaluation order, so serial and parallel runs produce identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Distinguishes the consumers of randomness so their streams never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Episode = 2,
    Tool = 3,
    Policy = 4,
    Batch = 5,
    Init = 6,
    Rollout = 7,
    GradCheck = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed, a purpose and a list of indices.
pub fn derive_seed(master: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x6A09_E667_F3BC_C908);
    h = splitmix64(h ^ (purpose as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    for (k, &i) in indices.iter().enumerate() {
        h = splitmix64(h ^ i.wrapping_add((k as u64 + 1).wrapping_mul(0xE703_7ED1_A0B4_28DB)));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, indices))
}
