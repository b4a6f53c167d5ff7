//! Seed derivation so that parallel jobs draw schedule-independent streams.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for job `index` under `base`. Distinct indices give
/// well-separated seeds; the mapping is fixed across platforms.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(base ^ mix(index))
}

/// Child seed for a multi-coordinate job, e.g. a sweep cell.
pub fn derive_seed_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |s, &i| derive_seed(s, i))
}
