//! Seed derivation for reproducible runs.
//!
//! Every station owns a ChaCha8 stream keyed by the trial seed and selected
//! by its bookkeeping id, so the order in which an adversary wakes stations
//! never shifts another station's draws. The adversary side draws from a
//! reserved stream of the same key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StationRng = ChaCha8Rng;

const ADVERSARY_STREAM: u64 = u64::MAX;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` in a batch started from `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn station_rng(trial_seed: u64, station: u32) -> StationRng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(station as u64);
    rng
}

/// Stream used to draw randomized wake-up schedules for a trial.
pub fn adversary_rng(trial_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(ADVERSARY_STREAM);
    rng
}
