//! Hierarchical seed derivation.
//!
//! Every random quantity in a run is drawn from its own ChaCha stream whose
//! seed is a hash of the master seed and a path of tags such as
//! `(DYNAMICS, step, NOISE, particle)`. Streams never depend on the order in
//! which other streams are consumed, so parallel evaluation is reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 0x_da7a;
pub const INIT: u64 = 0x_1417;
pub const DYNAMICS: u64 = 0x_d1a6;
pub const LATENT: u64 = 0x_1a7e;
pub const NOISE: u64 = 0x_4015;
pub const CONTAMINATION: u64 = 0x_c047;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
