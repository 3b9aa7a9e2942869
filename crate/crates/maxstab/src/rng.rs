//! Deterministic randomness streams.
//!
//! Every replica owns a ChaCha8 generator keyed by the master seed, with the
//! stream word built from a purpose tag and the replica index. Two replicas
//! never share a stream, and a replica's draws do not depend on which thread
//! runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Each experiment draws from its own family of streams so
/// that adding draws to one experiment never shifts another.
pub mod tag {
    pub const PATH: u32 = 1;
    pub const REFINE: u32 = 2;
    pub const COUPLED: u32 = 3;
    pub const SHARED: u32 = 4;
    pub const MATCH: u32 = 5;
    pub const SIGNS: u32 = 6;
    pub const FORMULA_LHS: u32 = 7;
    pub const FORMULA_RHS: u32 = 8;
    pub const SUBORDINATOR: u32 = 9;
    pub const CERTIFY: u32 = 10;
    pub const PRUNE: u32 = 11;
    pub const OCCUPANCY: u32 = 12;
    pub const TIME_CHANGE: u32 = 13;
    pub const ORACLE_MC: u32 = 14;
    pub const CALIBRATION: u32 = 15;
}

const REPLICA_BITS: u32 = 40;

/// Generator for `(master, tag, replica)`. Replica indices must stay below 2^40.
pub fn stream(master: u64, tag: u32, replica: u64) -> ChaCha8Rng {
    debug_assert!(replica < (1u64 << REPLICA_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((tag as u64) << REPLICA_BITS) | replica);
    rng
}

/// Sub-seed for a nested experiment (e.g. one ladder level) derived from a
/// master seed. Uses the generator itself as the mixing function.
pub fn derive_seed(master: u64, tag: u32, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, tag, index).next_u64()
}

/// Uniform draw in [0, 1) that is a pure function of `(key, a, b)`.
///
/// Used where a random variable is indexed by a large sparse key space
/// (pruning atoms) and must come out identical no matter the order or
/// laziness of evaluation. The mixer is the SplitMix64 finaliser.
#[inline]
pub fn keyed_unit(key: u64, a: u64, b: u64) -> f64 {
    let mut z = key
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(29);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
