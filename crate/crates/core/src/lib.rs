//! Multi-agent actor-critic training engine (MADDPG, MATD3, MASAC) on 2-D
//! particle environments, instrumented with a phase-level profiler.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense ReLU networks with analytic gradients, Adam and Polyak updates.
//! - [`env`]: predator-prey and cooperative-navigation particle worlds.
//! - [`replay`]: per-agent ring buffers with joint, index-aligned gathering.
//! - [`algos`]: the three trainers and the episode/update loops.
//! - [`profiler`]: wall-clock phase accounting and software counters.

pub mod algos;
pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod profiler;
pub mod replay;

mod error;

pub use error::{Error, Result};

/// Seeded generator used everywhere randomness is consumed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
