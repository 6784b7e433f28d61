//! Deterministic RNG stream fan-out.
//!
//! A run owns one master seed. Every consumer (environment, each agent's
//! action sampling, each agent's punishment draws, model fitting, ...)
//! gets its own counter-addressed ChaCha stream, so adding or removing one
//! consumer never perturbs the draws seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespaces for derived streams. The numeric value is part of the
/// on-disk reproducibility contract: do not reorder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Environment dynamics (spawns, coin colors, ...), indexed by episode.
    Env = 0,
    /// Per-agent action sampling.
    Policy = 1,
    /// Per-agent punishment Bernoulli draws.
    Punish = 2,
    /// Harm-model fitting (minibatch sampling), indexed by fitting agent.
    Fit = 3,
    /// Parameter initialization, indexed by agent.
    Init = 4,
    /// Evaluation-only consumers (matchup opponents, probes).
    Eval = 5,
}

/// splitmix64 finalizer; decorrelates (master, domain, index) triples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the 64-bit seed for a (master, domain, index) stream.
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    mix(master ^ mix((domain as u64) << 56 ^ index))
}

/// Build the RNG for a (master, domain, index) stream.
pub fn stream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(derive_seed(master, domain, index));
    rng
}
