//! Deterministic random number streams.
//!
//! Every source of randomness draws from a ChaCha stream identified by
//! (seed, stream id), so independently seeded components produce the same
//! numbers irrespective of scheduling or evaluation order. Stream ids are
//! allocated centrally here to keep components from colliding.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream id of the signal jump process.
pub const STREAM_SIGNAL: u64 = 0;
/// Stream id of the observation noise.
pub const STREAM_NOISE: u64 = 1;
/// Stream id of the moment-estimator Monte Carlo draws.
pub const STREAM_ESTIMATOR_MC: u64 = 2;
/// Stream id of the particle resampler.
pub const STREAM_RESAMPLE: u64 = 3;
/// Base stream id for filter particles; particle l uses STREAM_PARTICLE_BASE + l.
pub const STREAM_PARTICLE_BASE: u64 = 1_000;
/// Base stream id for diagnostic Monte Carlo replicas.
pub const STREAM_DIAG_BASE: u64 = 1_000_000;

/// An owned RNG for stream `id` of the master `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
