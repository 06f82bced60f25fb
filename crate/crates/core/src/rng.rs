//! Seeded random streams.
//!
//! Every random draw in the library goes through [`Stream`], a ChaCha20
//! generator. ChaCha output is specified independently of the platform, so a
//! `(seed, stream)` pair reproduces the same numbers everywhere.
//!
//! Stream split rule: a run with user seed `s` draws its sketches from
//! `stream(s, SKETCH)`; matrices and datasets use `stream(s, DATA)`;
//! right-hand sides use `stream(s, RHS)`, so a random matrix and its
//! right-hand side can share a seed; Monte-Carlo estimation uses
//! `stream(s, ESTIMATE)` and tuning pilots `stream(s, PILOT)`.
//! Repetitions of an experiment differ only in `s`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Stream = ChaCha20Rng;

pub const SKETCH: u64 = 0;
pub const DATA: u64 = 1;
pub const ESTIMATE: u64 = 2;
pub const PILOT: u64 = 3;
pub const RHS: u64 = 4;

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
