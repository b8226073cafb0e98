//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (`rand_chacha`), whose
//! output is fully specified and platform independent. A `u64` seed is expanded
//! into a 256-bit key with `SeedableRng::seed_from_u64`; independent streams
//! under the same key are selected with ChaCha's 64-bit stream id.
//!
//! Sub-seeds for replications are derived as the first `u64` produced by the
//! key of the master seed on stream `(replication << 8) | purpose`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Stream purposes under one seed. Values are part of the reproducibility contract.
pub mod purpose {
    pub const SIMULATE: u64 = 0;
    pub const CONTAMINATE_HITS: u64 = 1;
    pub const CONTAMINATE_LAW: u64 = 2;
    pub const MONTE_CARLO: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
}

/// ChaCha20 keyed by `seed`, positioned on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic sub-seed for `(replication, purpose)` under `master`.
pub fn derive_seed(master: u64, replication: u64, purpose: u64) -> u64 {
    stream_rng(master, (replication << 8) | (purpose & 0xff)).next_u64()
}
