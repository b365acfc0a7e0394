//! Deterministic sub-seed derivation.
//!
//! Every randomized stage of a run draws from its own ChaCha stream whose
//! seed is derived from the master seed plus a tag-and-index path. Results
//! are therefore independent of scheduling and worker count.

/// Seed-path tags. Values are part of the reproducibility contract: changing
/// them changes every derived stream.
pub mod tag {
    pub const PLAN: u64 = 1;
    pub const TRUTHS: u64 = 2;
    pub const WORLD: u64 = 3;
    pub const GIBBS: u64 = 4;
    pub const DEVIATION: u64 = 5;
    pub const DATASET: u64 = 6;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from `master` and a path of tag/index values.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &v in path {
        h = splitmix64(h ^ v);
    }
    h
}
