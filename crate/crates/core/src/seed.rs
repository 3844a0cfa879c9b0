//! Counter-based seed splitting.
//!
//! Every random stream in a simulation is derived from one master seed by
//! hashing `(parent, tag, index)` through SplitMix64. The derivation tree is
//!
//! ```text
//! master ─ run r ─ day d ─┬─ FAMILY            (server hash family)
//!                         ├─ ASSIGN 0          (complaint → user shuffle)
//!                         ├─ ASSIGN 1          (wire order shuffle)
//!                         └─ USER u ─┬─ HOLD   (dummy number)
//!                                    └─ REPORT (sparse reports t-major k-minor,
//!                                               then OLH seed and perturbation)
//! ```
//!
//! so a user's reports do not depend on how many other users were simulated
//! before it, and parallel execution reproduces the sequential transcript.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RUN: u64 = 0x5255_4e00;
pub const DAY: u64 = 0x4441_5900;
pub const FAMILY: u64 = 0x4641_4d00;
pub const ASSIGN: u64 = 0x4153_4700;
pub const USER: u64 = 0x5553_4500;
pub const HOLD: u64 = 0x484f_4c00;
pub const REPORT: u64 = 0x5245_5000;
pub const SYNTH: u64 = 0x5359_4e00;

/// SplitMix64 finalizer.
#[inline]
pub const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` for stream `tag`, element `index`.
#[inline]
pub fn derive(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)).wrapping_add(index))
}

/// A ChaCha8 generator for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
