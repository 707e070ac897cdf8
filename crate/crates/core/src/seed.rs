//! Seed derivation. Every random consumer in a run draws from its own
//! ChaCha stream keyed by `(base seed, purpose, a, b)`, so changing one
//! knob (e.g. the exemplar strategy) never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ModelInit = 1,
    TrainOrder = 2,
    FlpCoin = 3,
    DlpSubset = 4,
    DlpNoise = 5,
    ExemplarRandom = 6,
    ReplayOrder = 7,
    StreamMeans = 8,
    StreamSamples = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base);
    for part in [purpose as u64, a, b] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn rng(base: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, purpose, a, b))
}
