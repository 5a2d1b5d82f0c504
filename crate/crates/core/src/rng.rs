//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 keystream: the master seed fixes the key and the
//! pair (replica index, role) selects the 64-bit stream id, so streams for
//! different replicas or roles never overlap and any one of them can be
//! regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose a stream is drawn for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamRole {
    Simulation = 0,
    Coupling = 1,
    Independent = 2,
    Generator = 3,
    Sampling = 4,
    Auxiliary = 5,
}

/// Stream key `(master seed, replica, role)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub role: StreamRole,
}

const ROLE_BITS: u32 = 8;

impl StreamKey {
    pub fn new(seed: u64, replica: u64, role: StreamRole) -> Self {
        Self {
            seed,
            replica,
            role,
        }
    }

    pub fn stream_id(&self) -> u64 {
        debug_assert!(self.replica < (1 << (64 - ROLE_BITS)));
        (self.replica << ROLE_BITS) | self.role as u64
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng
    }
}

/// Shorthand for `StreamKey::new(seed, replica, role).rng()`.
pub fn stream(seed: u64, replica: u64, role: StreamRole) -> ChaCha8Rng {
    StreamKey::new(seed, replica, role).rng()
}
