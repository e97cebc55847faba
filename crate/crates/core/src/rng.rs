//! Seeded randomness shared by every simulation component.
//!
//! All randomness flows from a single 64-bit master seed. Sub-streams are
//! derived with [`derive_seed`], a SplitMix64 chain over a path of stream
//! labels, so any trial, epoch or round can be regenerated in isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the simulator.
pub type GameRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of stream labels.
///
/// `derive_seed(m, &[])` is `m`; each label folds in as
/// `s' = splitmix64(s ^ splitmix64(label))`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(master, |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn rng_from_seed(seed: u64) -> GameRng {
    GameRng::seed_from_u64(seed)
}

/// One standard normal sample via Box-Muller.
///
/// Always consumes exactly two `u64` outputs (four words), so a draw
/// advances [`rng_cursor`] by 4 regardless of the value produced.
pub fn standard_normal(rng: &mut GameRng) -> f64 {
    // 53-bit uniforms; u1 is shifted into (0, 1] so ln(u1) is finite.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Position of the generator in its output stream, in 32-bit words.
pub fn rng_cursor(rng: &GameRng) -> u64 {
    rng.get_word_pos() as u64
}
