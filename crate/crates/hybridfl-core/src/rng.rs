//! Named, seeded RNG substreams.
//!
//! Every random draw in a run comes from a substream keyed by
//! `(root seed, label, indices)`. Adding a protocol or reordering calls
//! never perturbs the draws of another substream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    root: u64,
}

impl RngFactory {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    /// Deterministic substream for a label plus integer coordinates
    /// (e.g. round and region indices).
    pub fn stream(&self, label: &str, indices: &[u64]) -> ChaCha8Rng {
        let mut h = fnv1a(label.as_bytes());
        for &ix in indices {
            h = fnv1a_u64(h, ix);
        }
        ChaCha8Rng::seed_from_u64(splitmix64(self.root ^ h))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fnv1a_u64(mut h: u64, v: u64) -> u64 {
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Round half up with a small guard against values like 4.4999999999999998
/// produced by binary representation of decimal proportions.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}
