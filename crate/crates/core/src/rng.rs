//! Seeded random streams.
//!
//! Each stream is a ChaCha8 generator keyed by the master seed and selected
//! by `(replicate, purpose)` through the cipher's stream id, so streams never
//! overlap and any replicate can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Trial = 1,
    Flip = 2,
    Bootstrap = 3,
}

pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    assert!(replicate < 1 << 56, "replicate id out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}
