//! Deterministic random streams.
//!
//! Every draw site gets its own ChaCha stream keyed by (master seed, layer,
//! particle, site), so results do not depend on how particles are scheduled
//! across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Logical draw sites inside one SMC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Site {
    Init = 1,
    Mutation = 2,
    Resample = 3,
    MixtureFit = 4,
    Data = 5,
    Truth = 6,
    Cluster = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key for one stream.
pub fn stream_key(master: u64, layer: u64, particle: u64, site: Site) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ layer.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ particle.wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(h ^ (site as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

pub fn stream(master: u64, layer: u64, particle: u64, site: Site) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(master, layer, particle, site))
}
