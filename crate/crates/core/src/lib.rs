//! Preference-based reinforcement learning with reward-ensemble exploration.
//!
//! An agent learns a reward function from pairwise segment preferences given
//! by a (scripted or human) teacher. An ensemble of reward networks supplies
//! the extrinsic reward (ensemble mean) and an exploration bonus (ensemble
//! standard deviation) whose weight decays over training. Baseline bonuses
//! (state entropy, dynamics disagreement, ICM) and an EPIC reward-distance
//! evaluator are included for comparison.

pub mod config;
pub mod envs;
pub mod epic;
mod error;
pub mod explore;
pub mod label_queue;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod replay;
pub mod reward;
pub mod sac;
pub mod sampler;
pub mod teacher;

pub use error::{ConfigError, Error, LossSnapshot, Result};

use rand::SeedableRng;

/// Random number generator used throughout; reproducible across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream index (splitmix64).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
