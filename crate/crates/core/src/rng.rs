//! Named, stable random substreams.
//!
//! Every random decision flows from one 64-bit root seed. A substream is
//! addressed by a label plus a path of integers (round, slot, trial, ...)
//! and seeded by folding them through SplitMix64. The derivation depends
//! only on its inputs, never on call order, so concurrent consumers and
//! resumed runs see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Substream labels used across the crate.
pub mod label {
    pub const ENGINE: &str = "engine";
    pub const ORACLE: &str = "oracle";
    pub const LANDSCAPE: &str = "landscape-gen";
    pub const TRIAL: &str = "trial";
    pub const BASELINE: &str = "baseline";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; stable across platforms and releases.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives the seed of substream `label/path[0]/path[1]/...` of `root`.
pub fn derive_seed(root: u64, label: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ label_hash(label));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

pub fn substream(root: u64, label: &str, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, label, path))
}
