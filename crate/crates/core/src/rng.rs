//! Seed derivation.
//!
//! Every random draw in the simulator comes from a ChaCha stream keyed by
//! `(master seed, domain, a, b)`. Generation `t`, prompt `i` always sees the
//! same stream regardless of the order in which prompts are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Seed domains. Distinct domains never share a stream.
pub mod domain {
    pub const WORLD: u64 = 1;
    pub const INITIAL: u64 = 2;
    pub const HELDOUT: u64 = 3;
    pub const CANDIDATES: u64 = 4;
    pub const SELECT: u64 = 5;
    pub const GENERATE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const CURATION: u64 = 8;
    pub const EXTERNAL: u64 = 9;
    pub const REFERENCE: u64 = 10;
    pub const REAL: u64 = 11;
    pub const CALIBRATION: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, domain: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ domain.wrapping_mul(0xA24B_AED4_963E_E407));
    h = splitmix64(h ^ a.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(h ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(master: u64, domain: u64, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, domain, a, b))
}
