//! Counter-based derivation of independent random streams.
//!
//! Every stream is keyed by `(master_seed, domain, a, b)`; the key is mixed
//! with SplitMix64 into a ChaCha seed, so the numbers a device sees in a
//! round never depend on the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes a stream can be drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamDomain {
    Channel = 1,
    Data = 2,
    Init = 3,
    Batch = 4,
    Scheduling = 5,
    Devices = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, domain, a, b)`; typically `a` is a device id and
/// `b` a round index.
pub fn stream(seed: u64, domain: StreamDomain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, word) in [domain as u64, a, b, 0x5eed].into_iter().enumerate() {
        h = splitmix64(h ^ word);
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
