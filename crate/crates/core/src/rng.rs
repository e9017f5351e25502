//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), which
//! produces the same sequence on every platform. A root seed fans out into
//! independent per-purpose streams by mixing a purpose tag and an optional
//! sub-index through SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    Split,
    Partition,
    Init,
    Selection,
    Training,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0x6461_7461,
            Purpose::Split => 0x7370_6c74,
            Purpose::Partition => 0x7061_7274,
            Purpose::Init => 0x696e_6974,
            Purpose::Selection => 0x7365_6c63,
            Purpose::Training => 0x7472_6e67,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `purpose` and sub-stream `index` from a root seed.
pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ purpose.tag()).wrapping_add(index))
}

/// A generator seeded directly from `seed`.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generator for `purpose`/`index` under `root`.
pub fn stream(root: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(root, purpose, index))
}
