//! Splittable, reproducible random streams.
//!
//! Every stochastic routine in this crate takes an [`RngStream`]: a
//! 64-bit master seed plus a derivation path of child indices, folded
//! eagerly into a 128-bit key. Identical (seed, path) pairs produce
//! bit-identical output on every platform; distinct paths give
//! independent-for-all-practical-purposes streams. This is what lets
//! replicas, tree vertices and experiment stages draw randomness in
//! parallel without any coordination.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period 64-bit mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SEED_TAG_HI: u64 = 0x632b_e593_04b4_fe1f;
const SEED_TAG_LO: u64 = 0x9159_15c6_4f09_976c;
const CHILD_TAG: u64 = 0x10e7_2f4a_72f9_4f25;
const SALT_TAG: u64 = 0x5851_f42d_4c95_7f2d;

/// A position in the stream tree: master seed plus derivation path,
/// folded into two words so that storing one per tree vertex stays O(1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    hi: u64,
    lo: u64,
}

impl RngStream {
    /// Root stream for a master seed.
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            hi: mix(seed ^ SEED_TAG_HI),
            lo: mix(seed ^ SEED_TAG_LO),
        }
    }

    /// Child stream at `index`. Order-sensitive: `child(a).child(b)` and
    /// `child(b).child(a)` differ, as do paths of different length.
    #[must_use]
    pub fn child(self, index: u64) -> Self {
        let t = mix(index ^ CHILD_TAG);
        RngStream {
            hi: mix(self.hi ^ t),
            lo: mix(self.lo.wrapping_add(t ^ CHILD_TAG)),
        }
    }

    /// Stream re-keyed with an unrelated salt (e.g. a percolation seed).
    /// Distinct from every `child` derivation of the same stream.
    #[must_use]
    pub fn fold(self, salt: u64) -> Self {
        let t = mix(salt ^ SALT_TAG);
        RngStream {
            hi: mix(self.hi.wrapping_add(t)),
            lo: mix(self.lo ^ t ^ SALT_TAG),
        }
    }

    /// Instantiate the generator for this stream position.
    pub fn rng(self) -> ChaCha8Rng {
        let k = [
            self.hi,
            self.lo,
            mix(self.hi ^ self.lo),
            mix(self.hi.wrapping_add(self.lo)),
        ];
        let mut key = [0u8; 32];
        for (i, w) in k.iter().enumerate() {
            key[8 * i..8 * (i + 1)].copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
