//! Deterministic substream derivation for Monte Carlo work.
//!
//! Every random draw in the crate is keyed by a master seed plus a path of
//! integer tags (trial index, agent index, purpose tag). Two consequences:
//!
//! * adding an agent or reordering the evaluation schedule never perturbs
//!   another agent's noise, which is what makes paired common-random-number
//!   comparisons valid;
//! * results are byte-identical regardless of how many worker threads run,
//!   because no thread ever shares generator state with another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Purpose tag for the latent world value in a trial substream.
pub const TAG_WORLD: u64 = 0;
/// Purpose tag for agent `i`'s measurement noise (`TAG_AGENT_BASE + i`).
pub const TAG_AGENT_BASE: u64 = 1;
/// Purpose tag for the honest agent's measurement noise.
pub const TAG_HONEST: u64 = u64::MAX;

// SplitMix64 finalizer; full-period bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapse `(master, path)` into a single derived seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = mix64(master ^ 0x5359_4E43_5352_4E47); // domain separator
    for &tag in path {
        state = mix64(state ^ tag);
    }
    state
}

/// Derive a generator for the substream identified by `path` under `master`.
pub fn substream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// One standard-normal draw from the substream `(master, path)`.
pub fn normal_draw(master: u64, path: &[u64]) -> f64 {
    StandardNormal.sample(&mut substream(master, path))
}
