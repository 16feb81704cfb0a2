//! Seeded PRNG used for every random draw (xoshiro256++, a 64-bit
//! xorshift-family generator).

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Prng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Independent stream for `(seed, stream)`, e.g. one per decoded sentence.
pub fn derived(seed: u64, stream: u64) -> Prng {
    // splitmix64 finalizer over the stream index keeps nearby streams apart.
    let mut z = stream.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    Prng::seed_from_u64(seed ^ z)
}
