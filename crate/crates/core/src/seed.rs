//! Named sub-seeds derived from a single experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `seed` with a stream name and integer tags into an independent seed.
///
/// FNV-1a over the name followed by splitmix64 finalization; stable across
/// platforms and compiler versions.
pub fn derive(seed: u64, name: &str, tags: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = splitmix(seed ^ h);
    for &t in tags {
        x = splitmix(x ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    x
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
