//! Deterministic seed derivation.
//!
//! Every random quantity is drawn from `ChaCha8Rng::seed_from_u64(seed)` on an
//! explicit stream, so results never depend on how work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag mixed into the seed of network initialisation.
pub const TAG_INIT: u64 = 1;
/// Tag mixed into the seed of the QUT Monte Carlo draws inside a fit.
pub const TAG_QUT: u64 = 2;
/// Tag mixed into the seed of simulated datasets.
pub const TAG_DATA: u64 = 3;
/// Tag mixed into the seed of fits inside simulation trials.
pub const TAG_FIT: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`; distinct part lists give unrelated seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for item `stream` of a family seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
