//! Per-purpose seed derivation.
//!
//! Every random decision is drawn from a generator seeded by
//! `mix(global_seed, purpose, case_id)`, so results do not depend on worker
//! count or on the order in which cases are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Derives a 64-bit seed from the global seed, a purpose tag and a case id.
pub fn mix(seed: u64, purpose: &str, case_id: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    // separator so ("ab", "c") and ("a", "bc") differ
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, case_id.as_bytes());
    splitmix64(h ^ splitmix64(seed))
}

pub fn rng_for(seed: u64, purpose: &str, case_id: &str) -> PipelineRng {
    PipelineRng::seed_from_u64(mix(seed, purpose, case_id))
}
