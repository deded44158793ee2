//! Deterministic seed derivation.
//!
//! Every randomized stage of the pipeline owns a private generator seeded
//! through `derive_seed`, so results never depend on thread count or call
//! interleaving. The derivation is a SplitMix64 walk over the master seed and
//! a list of stream labels (tree index, repetition index, stage tag, ...).

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 step; the standard finalizer with good avalanche behavior.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an ordered list of stream labels.
/// Deterministic, order-sensitive, and independent of any global state.
pub fn derive_seed(master: u64, streams: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &s in streams {
        state ^= s.wrapping_mul(0xff51_afd7_ed55_8ccd).wrapping_add(1);
        out = splitmix64(&mut state);
    }
    out
}

/// A generator for the given derived stream.
pub fn stream_rng(master: u64, streams: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, streams))
}
