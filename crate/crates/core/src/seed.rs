//! Seed derivation for the independent random streams used by a run.
//!
//! Every stream (mini-batches, warm-init noise, permutations, dataset
//! generation) is keyed by a domain tag plus a few integers and hashed with
//! SplitMix64, so streams never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes apart even when the
/// remaining integers coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Batch = 0x6261_7463_68,
    Epoch = 0x6570_6f63_68,
    Init = 0x696e_6974,
    WarmInit = 0x7761_726d,
    Pretrain = 0x7072_6574,
    Permutation = 0x7065_726d,
    Dataset = 0x6461_7461,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `(seed, stream, parts...)` into a single 64-bit seed.
pub fn derive(seed: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn rng(seed: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, parts))
}
