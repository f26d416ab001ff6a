//! Sub-seed derivation. Every random stream in a run is seeded with
//! `derive(run_seed, tag)`, where `tag` names the purpose ("memory-prior",
//! "write-noise/<entry>/<j>", ...), so streams never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_extend(FNV_OFFSET, bytes)
}

pub fn fnv1a_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// FNV-1a over the little-endian seed, a 0xff separator and the tag, then
/// a splitmix64 finalizer.
pub fn derive(seed: u64, tag: &str) -> u64 {
    let h = fnv1a_extend(fnv1a(&seed.to_le_bytes()), &[0xff]);
    splitmix64(fnv1a_extend(h, tag.as_bytes()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
