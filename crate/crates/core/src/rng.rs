//! Seeded random streams.
//!
//! Every random decision in a run derives from one `u64` seed. Each consumer
//! asks for a named sub-stream, so drawing more numbers in one place (say, an
//! extra episode) never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream names used across the crate.
pub mod streams {
    pub const DATAGEN: &str = "datagen";
    pub const INIT: &str = "init";
    pub const SPLIT: &str = "split";
    pub const EPISODE: &str = "episode";
    pub const CLUSTER: &str = "cluster";
    pub const GRADCHECK: &str = "gradcheck";
}

/// FNV-1a, fixed so stream ids never depend on the std hasher.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// A sub-stream further keyed by an index, e.g. one per epoch.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream_id(name));
    rng
}
