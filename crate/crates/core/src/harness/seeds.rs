//! Seed splitting.
//!
//! An episode seed is `mix(master, round, task ordinal, episode ordinal)`.
//! Collection rounds are `u32`, so any round value with the top bit set is
//! outside every collection namespace; evaluation and training use two such
//! constants.

/// Round value used for all evaluation episodes.
pub const EVAL_NAMESPACE: u64 = 0xE7A1_0000_0000_0001;
/// Round value used for parameter init and minibatch streams.
pub const TRAIN_NAMESPACE: u64 = 0xB1A5_0000_0000_0002;

/// 64-bit finalizer (splitmix64); a bijection with full avalanche.
fn avalanche(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold `parts` into one seed; order matters.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0F7A_E000_0000, |h, &p| avalanche(h ^ avalanche(p)))
}

pub fn episode_seed(master: u64, round: u64, task_ordinal: u64, episode_ordinal: u64) -> u64 {
    mix(&[master, round, task_ordinal, episode_ordinal])
}
