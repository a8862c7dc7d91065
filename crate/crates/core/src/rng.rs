//! Deterministic, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(master seed, domain)` and
//! positioned on the ChaCha stream selected by `(frame, pixel)`. Work can be
//! split across threads in any order and still reproduce the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// FNV-1a hash of a label, used to give each simulator its own key space.
pub const fn domain(label: &str) -> u64 {
    let bytes = label.as_bytes();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < bytes.len() {
        hash ^= bytes[i] as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        i += 1;
    }
    hash
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Factory for the streams of one simulation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64, domain: u64) -> Self {
        let mut state = seed ^ domain.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { key }
    }

    /// Derived factory for a sub-experiment (for example one sweep point).
    pub fn child(&self, index: u64) -> Self {
        let mut state = u64::from_le_bytes(self.key[..8].try_into().unwrap()) ^ index;
        let mut key = self.key;
        for chunk in key.chunks_exact_mut(8) {
            let word = u64::from_le_bytes(chunk.try_into().unwrap()) ^ splitmix64(&mut state);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self { key }
    }

    /// Stream for one frame (or one block of independent samples).
    pub fn frame(&self, frame: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(frame);
        rng
    }

    /// Stream for one pixel of one frame.
    pub fn pixel(&self, frame: u64, pixel: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.child(pixel.wrapping_add(1) << 1).key);
        rng.set_stream(frame);
        rng
    }
}
