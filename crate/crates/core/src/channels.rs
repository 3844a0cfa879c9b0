//! Channel assignment with a pairwise-independent hash family.
//!
//! Round `t` uses `h_t(s) = ((a_t·s + b_t) mod P) mod K`, with `P = 2^31 - 1`.
//! The coefficients are drawn by the server and published with the day's
//! go-list, so every client and the server agree on each suffix's channel.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Mersenne prime `2^31 - 1`, larger than the 7-digit suffix domain.
pub const MODULUS: u64 = (1 << 31) - 1;

pub const MIN_CHANNELS: u32 = 8;
pub const MAX_CHANNELS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashFamily {
    pub modulus: u64,
    /// `(a_t, b_t)` for rounds `1..=T`.
    pub coefficients: Vec<(u64, u64)>,
    pub channels: u32,
}

impl HashFamily {
    /// Draw `rounds` coefficient pairs with `a_t ∈ [1, P)` and `b_t ∈ [0, P)`.
    pub fn random<R: Rng + ?Sized>(rounds: u16, channels: u32, rng: &mut R) -> Self {
        assert!(rounds >= 1, "at least one round");
        assert!(channels >= 1, "at least one channel");
        let coefficients = (0..rounds)
            .map(|_| (rng.gen_range(1..MODULUS), rng.gen_range(0..MODULUS)))
            .collect();
        HashFamily {
            modulus: MODULUS,
            coefficients,
            channels,
        }
    }

    pub fn rounds(&self) -> u16 {
        self.coefficients.len() as u16
    }

    /// The same coefficients with a different channel count.
    pub fn with_channels(&self, channels: u32) -> Self {
        assert!(channels >= 1, "at least one channel");
        HashFamily {
            modulus: self.modulus,
            coefficients: self.coefficients.clone(),
            channels,
        }
    }

    /// 1-based channel of `suffix` in 1-based round `round`.
    #[inline]
    pub fn channel_of(&self, suffix: u32, round: u16) -> u32 {
        let (a, b) = self.coefficients[usize::from(round) - 1];
        let h = (a * u64::from(suffix) + b) % self.modulus;
        (h % u64::from(self.channels)) as u32 + 1
    }
}

/// `K = 2^ceil(log2(sqrt(n)·T))`, clamped to `[8, 1024]`.
pub fn default_channel_count(contributors: u64, rounds: u16) -> u32 {
    let target = (contributors as f64).sqrt() * f64::from(rounds);
    let k = if target <= 1.0 {
        1
    } else {
        2u64.pow(target.log2().ceil() as u32)
    };
    k.clamp(u64::from(MIN_CHANNELS), u64::from(MAX_CHANNELS)) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_channel_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fam = HashFamily::random(3, 1, &mut rng);
        for s in [0, 1, 9_999_999, 5_550_142] {
            for t in 1..=3 {
                assert_eq!(fam.channel_of(s, t), 1);
            }
        }
    }

    #[test]
    fn coefficients_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let fam = HashFamily::random(2, 16, &mut rng);
            for &(a, b) in &fam.coefficients {
                assert!((1..MODULUS).contains(&a));
                assert!(b < MODULUS);
            }
        }
    }

    #[test]
    fn pair_collision_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 8u32;
        let trials = 10_000;
        let mut collisions = 0u32;
        for _ in 0..trials {
            let fam = HashFamily::random(1, k, &mut rng);
            collisions += u32::from(fam.channel_of(5_550_142, 1) == fam.channel_of(1_234_567, 1));
        }
        let p = 1.0 / f64::from(k);
        let se = (p * (1.0 - p) / f64::from(trials)).sqrt();
        let rate = f64::from(collisions) / f64::from(trials);
        assert!((rate - p).abs() < 3.0 * se, "rate {rate}");
        assert!(rate <= p + 1.0 / MODULUS as f64 + 3.0 * se);
    }

    #[test]
    fn rounds_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = 4u32;
        let trials = 16_000;
        let mut joint = [[0u32; 4]; 4];
        for _ in 0..trials {
            let fam = HashFamily::random(2, k, &mut rng);
            let c1 = fam.channel_of(42, 1) - 1;
            let c2 = fam.channel_of(42, 2) - 1;
            joint[c1 as usize][c2 as usize] += 1;
        }
        let expected = f64::from(trials) / 16.0;
        let chi2: f64 = joint
            .iter()
            .flatten()
            .map(|&o| (f64::from(o) - expected).powi(2) / expected)
            .sum();
        // 15 degrees of freedom; 99.9% quantile is 37.7.
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }

    #[test]
    fn default_k() {
        assert_eq!(default_channel_count(0, 2), 8);
        assert_eq!(default_channel_count(1000, 2), 64);
        assert_eq!(default_channel_count(5000, 2), 256);
        assert_eq!(default_channel_count(10_000_000, 2), 1024);
    }
}
