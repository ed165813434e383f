//! Seeded random streams. Every stochastic step in the crate draws from a
//! `ChaCha8Rng` derived from a root seed plus a path of indices, so results do
//! not depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a root seed with a path of stream indices into a new seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(root), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(1))))
}

pub fn derive(root: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = derive(7, &[1, 2]).random();
        let b: u64 = derive(7, &[1, 2]).random();
        let c: u64 = derive(7, &[2, 1]).random();
        let d: u64 = derive(8, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
