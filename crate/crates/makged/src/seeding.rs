//! Stable seed derivation for independent RNG streams.
//!
//! Substreams (per subgraph, per triple, per epoch) are derived from a base
//! seed plus integer salts, so results do not depend on hasher state or on
//! how work is scheduled across threads.

/// splitmix64 step; a fixed, well-mixed permutation of the state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a substream seed from a base seed and a list of salts.
pub(crate) fn derive(base: u64, salts: &[u64]) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    for &salt in salts {
        state ^= salt;
        out ^= splitmix64(&mut state);
    }
    out
}
