//! Deterministic seeding. Every random choice in the pipeline flows from one
//! global seed through named sub-seeds, so each stage can be rerun in
//! isolation and still reproduce byte-identical artifacts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The stream cipher rng used everywhere; stable output across platforms.
pub type DetRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// FNV-1a over the component name, mixed into the parent seed.
pub fn sub_seed(seed: u64, component: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    splitmix(seed ^ h)
}

/// Indexed variant for per-run / per-item seeds.
pub fn sub_seed_indexed(seed: u64, component: &str, index: u64) -> u64 {
    splitmix(sub_seed(seed, component).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
