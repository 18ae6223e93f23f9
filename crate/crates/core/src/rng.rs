//! Deterministic RNG derivation.
//!
//! Every random stream in the system is a ChaCha8 generator keyed by mixing a
//! master seed with a stream id. Parallel evaluation jobs derive their
//! generators from (master_seed, job_id) only, so results are independent of
//! worker count and scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id for in-simulator randomness (demand draws, allocations).
pub const SIM_STREAM: u64 = 1;
/// Stream id for policy-side randomness (action sampling, exploration).
pub const POLICY_STREAM: u64 = 2;
/// Stream id for scenario generation.
pub const GEN_STREAM: u64 = 3;

/// SplitMix64 finalizer. Good avalanche, cheap, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream/job id into a 64-bit subseed.
pub fn mix(master_seed: u64, stream: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(stream.wrapping_add(0xa076_1d64_78bd_642f)))
}

/// Derives the generator for one (seed, stream) pair.
pub fn derive_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master_seed, stream))
}

/// Derives the generator for one evaluation job: stream is further split by
/// job id so a job's draws never depend on which worker runs it.
pub fn derive_job_rng(master_seed: u64, stream: u64, job_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(master_seed, stream), job_id))
}
