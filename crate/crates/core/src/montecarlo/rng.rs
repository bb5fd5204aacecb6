//! Counter-based substreams. Every block of samples of every stream gets its
//! own ChaCha8 key derived from `(seed, domain, index, block)`, so results do
//! not depend on how blocks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples drawn from one substream before moving to the next key.
pub const BLOCK: usize = 4096;

/// Stream families. Distinct domains never share keys.
pub mod domain {
    pub const CELL: u64 = 1;
    pub const THIN: u64 = 2;
    pub const FOCK: u64 = 3;
    pub const COHERENT: u64 = 4;
    pub const SWEEP: u64 = 5;
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, domain: u64, index: u64, block: u64) -> ChaCha8Rng {
    let mut state = seed;
    for word in [domain, index, block] {
        state = splitmix(&mut state) ^ word;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Number of blocks covering `n` samples.
pub fn blocks(n: usize) -> usize {
    n.div_ceil(BLOCK)
}
