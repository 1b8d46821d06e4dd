//! Named seed derivation.
//!
//! Every random stream is keyed by the run seed plus a path of names
//! (stage, subject, ...), so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[&str]) -> u64 {
    let mut h = splitmix64(seed);
    for part in path {
        let mut f = FNV_OFFSET;
        for b in part.bytes().chain(std::iter::once(0xff)) {
            f ^= b as u64;
            f = f.wrapping_mul(FNV_PRIME);
        }
        h = splitmix64(h ^ f);
    }
    h
}

pub fn rng(seed: u64, path: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
