//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers hashed
//! into a single 64-bit seed, so results never depend on evaluation order or
//! batching. Distinct purposes use distinct domain tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags separating the independent uses of a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    FeatureNoise = 1,
    Dropout = 2,
    HeadInit = 3,
    Batches = 4,
    Round = 5,
    Bandwidth = 6,
    Acquisition = 7,
    Split = 8,
    Synthetic = 9,
    Training = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of `parts` under `domain`.
pub fn derive(domain: Domain, parts: &[u64]) -> u64 {
    let mut h = splitmix64(domain as u64);
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Seed for one (experiment seed, pixel, sample index) stream.
pub fn stream_seed(experiment_seed: u64, pixel: usize, sample_index: usize) -> u64 {
    derive(
        Domain::FeatureNoise,
        &[experiment_seed, pixel as u64, sample_index as u64],
    )
}

pub fn rng_from(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn rng(domain: Domain, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(domain, parts))
}
