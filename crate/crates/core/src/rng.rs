//! Seed derivation for independent, schedule-free random streams.

/// Purpose tags mixed into derived seeds so streams never collide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const TRAIN_DATA: u64 = 3;
    pub const TEST_DATA: u64 = 4;
    pub const CLIENT: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const PRETRAIN: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `base` together with `parts` (e.g. stream tag, round, client id).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
