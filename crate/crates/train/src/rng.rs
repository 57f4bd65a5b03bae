//! Counter-based RNG derivation: every random decision in training is keyed
//! by (seed, step, purpose), so resuming needs no generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SHUFFLE: u64 = 1;
pub const FLIP: u64 = 2;
pub const GUIDE: u64 = 3;
pub const NOISE: u64 = 4;
pub const SAMPLE: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived(seed: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(step ^ splitmix(purpose))))
}
