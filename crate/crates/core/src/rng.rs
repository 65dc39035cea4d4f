//! Seed splitting: independent, addressable random streams from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream labels so that adding a consumer never shifts another's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Imu = 1,
    Gnss = 2,
    Psns = 3,
    PsnsSign = 4,
    InitialError = 5,
    SkyPixel = 6,
    SkyAop = 7,
}

/// Deterministic generator for `(seed, stream, index)`.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}
