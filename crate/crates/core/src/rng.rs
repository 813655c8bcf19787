//! Counter-based randomness.
//!
//! Every random quantity in the crate is a pure function of a 64-bit master
//! seed, a domain tag and a counter. Nothing depends on evaluation order, so
//! parallel loops reproduce sequential results bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weyl increment of SplitMix64.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags separating independent uses of one master seed.
pub mod tag {
    pub const PARAMS: u64 = 0x5041_5241_4D53_0001;
    pub const TAIL: u64 = 0x5441_494C_0000_0002;
    pub const PAIRS: u64 = 0x5041_4952_5300_0003;
    pub const LEVELS: u64 = 0x4C45_5645_4C53_0004;
    pub const BIRKHOFF: u64 = 0x4249_524B_0000_0005;
    pub const BOOTSTRAP: u64 = 0x424F_4F54_0000_0006;
    pub const BROWNIAN: u64 = 0x4252_4F57_4E00_0007;
    pub const DISTORTION: u64 = 0x4449_5354_0000_0008;
    pub const ORBITS: u64 = 0x4F52_4249_5400_0009;
    pub const BITS: u64 = 0x4249_5453_0000_000A;
}

/// SplitMix64 output function (Stafford variant 13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Zig-zag encoding of a signed index: 0, -1, 1, -2, 2, ... map to 0, 1, 2, 3, 4, ...
#[inline]
pub fn zigzag(i: i64) -> u64 {
    ((i << 1) ^ (i >> 63)) as u64
}

/// Key of a (seed, tag) stream.
#[inline]
pub fn stream_key(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed ^ tag).wrapping_add(tag))
}

/// The `counter`-th 64-bit word of the stream `key`.
#[inline]
pub fn counter_word(key: u64, counter: u64) -> u64 {
    mix64(key.wrapping_add(GOLDEN_GAMMA.wrapping_mul(counter.wrapping_add(1))))
}

/// Uniform double in `[0, 1)` from the top 53 bits of a word.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A ChaCha generator owned by one (seed, tag, index) triple, used where a
/// task needs an unbounded supply of variates.
pub fn task_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(counter_word(stream_key(seed, tag), index))
}

/// Small sequential bit source used to refresh low-order bits of tracked points.
#[derive(Clone, Debug)]
pub struct BitSource {
    state: u64,
    buffer: u64,
    left: u32,
}

impl BitSource {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            buffer: 0,
            left: 0,
        }
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    #[inline]
    pub fn next_bit(&mut self) -> u64 {
        if self.left == 0 {
            self.buffer = self.next_word();
            self.left = 64;
        }
        let bit = self.buffer & 1;
        self.buffer >>= 1;
        self.left -= 1;
        bit
    }
}
