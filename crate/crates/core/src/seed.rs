//! Deterministic derivation of independent random streams from one master seed.
//!
//! Every stream is identified by `(master, agent, phase, purpose)`. The four
//! words are folded through the SplitMix64 finalizer in that order:
//!
//! ```text
//! h = mix(master ^ GOLDEN)
//! h = mix(h ^ agent)
//! h = mix(h ^ phase)
//! h = mix(h ^ purpose)
//! ```
//!
//! and the result seeds a ChaCha8 generator. Streams for distinct tuples are
//! unrelated for all practical purposes, and a given tuple always yields the
//! same stream regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Agent id used for streams owned by the orchestrator rather than an agent.
pub const GLOBAL_AGENT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Data = 1,
    Fair = 2,
    Private = 3,
    Baseline = 4,
    Global = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Sampler = 3,
    Noise = 4,
    Split = 5,
    Shard = 6,
    Synthetic = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, agent: u64, phase: Phase, purpose: Purpose) -> u64 {
    let mut h = mix(master ^ GOLDEN);
    h = mix(h ^ agent);
    h = mix(h ^ phase as u64);
    mix(h ^ purpose as u64)
}

pub fn stream(master: u64, agent: u64, phase: Phase, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, agent, phase, purpose))
}
