//! Restart competing bandits (RCB) for two-sided matching markets whose
//! player preferences change over time.
//!
//! The crate is organised bottom-up:
//!
//! - [`market`]: stable-matching theory. Deferred acceptance in both
//!   orientations, blocking-pair certification and brute-force enumeration
//!   oracles for small markets.
//! - [`environment`]: piecewise-constant ground-truth means, change
//!   accounting, reward sampling and per-round stable benchmarks.
//! - [`learner`]: the per-player UCB state machine with restarts.
//! - [`engine`]: the RCB simulation loop and regret accounting.
//! - [`meta`]: EXP3 over a geometric ensemble of restart periods, for the
//!   case where the number of changes is unknown.
//! - [`config`], [`generate`], [`sweep`], [`export`]: experiment plumbing
//!   used by the `rcb` command-line tool.
//!
//! Every run is a pure function of its configuration and seed.

pub mod config;
pub mod engine;
pub mod environment;
pub mod error;
pub mod export;
pub mod generate;
pub mod learner;
pub mod market;
pub mod meta;
pub mod oracle;
pub mod sweep;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate. ChaCha keeps streams stable
/// across platforms and dependency upgrades, which the trace determinism
/// contract relies on.
pub type SimRng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`. Stream 0 drives the simulation,
/// stream 1 instance generation, stream 2 the meta-bandit.
pub fn seeded_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
