//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit RNG. Independent streams are
//! derived from a master seed and a path of integer keys, so results never
//! depend on the order in which sources or nodes are processed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

/// The RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Stream tags keep the key paths of unrelated consumers disjoint.
pub mod stream {
    pub const THEORY_DATA: u64 = 0x7465_6f72;
    pub const PARTITION: u64 = 0x7061_7274;
    pub const INPUT_SHIFT: u64 = 0x7368_6966;
    pub const INIT: u64 = 0x696e_6974;
    pub const PARTICIPANTS: u64 = 0x7061_7274_6963;
    pub const LOCAL: u64 = 0x6c6f_6361;
    pub const EVAL: u64 = 0x6576_616c;
    pub const TOPOLOGY: u64 = 0x746f_706f;
    pub const PROBE: u64 = 0x7072_6f62;
    pub const SPLIT: u64 = 0x7370_6c69;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a master seed and a key path into a child seed.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// RNG for the stream identified by `(master, keys...)`.
pub fn stream_rng(master: u64, keys: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, keys))
}

#[inline]
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

/// Fills a fresh vector with i.i.d. standard normal draws.
pub fn normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    (0..len).map(|_| standard_normal(rng)).collect()
}
