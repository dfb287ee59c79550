//! Seed-derived substreams.
//!
//! Every randomized unit of work (an ordering draw, a replication's data, a
//! backtest step) gets its own generator derived from `(seed, tag, index)`,
//! so results do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_ORDERING: u64 = u64::from_le_bytes(*b"ordering");
pub(crate) const TAG_FOLDS: u64 = u64::from_le_bytes(*b"cvfolds\0");
pub(crate) const TAG_SAMPLE: u64 = u64::from_le_bytes(*b"sampler\0");
pub(crate) const TAG_SCENARIO: u64 = u64::from_le_bytes(*b"scenario");
pub(crate) const TAG_DATA: u64 = u64::from_le_bytes(*b"repdata\0");
pub(crate) const TAG_REP_ORDER: u64 = u64::from_le_bytes(*b"reporder");
pub(crate) const TAG_BACKTEST: u64 = u64::from_le_bytes(*b"backtest");

/// SplitMix64 finalizer; bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for the substream `(seed, tag, index)`.
pub(crate) fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut state = mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
        ^ mix64(tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ mix64(index.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
