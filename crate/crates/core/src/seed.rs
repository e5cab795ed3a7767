//! Deterministic derivation of independent RNG streams from a base seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating the random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Realize = 1,
    Plan = 2,
    Replay = 3,
    Arrivals = 4,
    Service = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base`, one splitmix round per part.
pub fn derive(base: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = mix(base.wrapping_add(GOLDEN).wrapping_add(stream as u64));
    for &p in parts {
        h = mix(h ^ p.wrapping_add(GOLDEN));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
