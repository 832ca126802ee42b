//! Seed derivation for independent, reproducible random streams.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` under `base`.
///
/// `derive_seed(b, i) = mix64(mix64(b) ^ mix64(i + 1) · φ)` where φ is the
/// 64-bit golden ratio constant. Distinct indices give statistically
/// independent seeds; the mapping is stable across platforms.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ mix64(index.wrapping_add(1)).wrapping_mul(GOLDEN))
}
