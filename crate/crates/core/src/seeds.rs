//! Seed derivation for reproducible per-episode randomness.
//!
//! Every component that needs one RNG stream per episode (weather draws,
//! exploration, random policies) derives child seeds from a base seed with
//! [`derive_seed`], so runs are reproducible end to end and episodes stay
//! decorrelated.

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream index.
///
/// Deterministic, and distinct indices give statistically independent seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}
