//! ε-LDP randomizers.
//!
//! The sparse randomizers pick one coordinate `r` of the `m`-entry input and
//! report a single value there. Because codeword entries are `±1/sqrt(m)`,
//! every nonzero output has magnitude `c·sqrt(m)` in both the encoded branch
//! (`±c·m·x_r`) and the zero branch (`±c·sqrt(m)`), so a report is fully
//! described by `(index, sign)` plus the shared scale `c`.
//!
//! The extended randomizer reduces to the basic one under
//! `c = (e^ε+1)/(e^ε-1)`, `p = e^ε/(e^ε+1)`, `q = 1/(e^ε+1)`, `θ = 1/2`; both are
//! implemented on top of [`ThreeAtom`], which is the general three-valued
//! sampler with free `(p, q, θ, c)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AreaCode, Codeword, PhoneNumber, CODE_LENGTH};
use crate::seed::splitmix64;

/// Smallest budget accepted by the parameter constructors.
pub const MIN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BudgetError {
    #[error("privacy budget {0} is degenerate (must be finite and >= 1e-6)")]
    DegenerateBudget(f64),
    #[error("OLH range {0} must be at least 2")]
    RangeTooSmall(u32),
}

fn check_budget(epsilon: f64) -> Result<f64, BudgetError> {
    if epsilon.is_finite() && epsilon >= MIN_EPSILON {
        Ok(epsilon.exp())
    } else {
        Err(BudgetError::DegenerateBudget(epsilon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomizerKind {
    Basic,
    Extended,
}

impl std::fmt::Display for RandomizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RandomizerKind::Basic => "basic",
            RandomizerKind::Extended => "extended",
        })
    }
}

impl std::str::FromStr for RandomizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(RandomizerKind::Basic),
            "extended" => Ok(RandomizerKind::Extended),
            other => Err(format!("unknown randomizer {other:?} (expected basic or extended)")),
        }
    }
}

/// Which input a sparse randomizer perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Zero,
    Word(Codeword),
}

/// Which branch of the randomizer produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// The input was a codeword.
    Enc,
    /// The input was the zero vector.
    Zero,
}

/// The one nonzero slot of a sparse report: 0-based coordinate and sign of
/// the value in `{-1, 0, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Draw {
    pub index: u8,
    pub sign: i8,
    pub branch: Branch,
}

impl Draw {
    /// Real value `z_r` for scale `c`.
    pub fn value(&self, c: f64) -> f64 {
        f64::from(self.sign) * c * (CODE_LENGTH as f64).sqrt()
    }
}

/// A sparse report routed to `(round, channel, prefix)`; `round`, `channel`
/// and `index` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseReport {
    pub round: u16,
    pub channel: u32,
    pub prefix: AreaCode,
    pub index: u8,
    pub sign: i8,
    pub branch: Branch,
}

impl SparseReport {
    pub fn new(round: u16, channel: u32, prefix: AreaCode, draw: Draw) -> Self {
        SparseReport {
            round,
            channel,
            prefix,
            index: draw.index + 1,
            sign: draw.sign,
            branch: draw.branch,
        }
    }

    pub fn coordinate(&self) -> usize {
        usize::from(self.index) - 1
    }

    pub fn value(&self, c: f64) -> f64 {
        f64::from(self.sign) * c * (CODE_LENGTH as f64).sqrt()
    }
}

/// General three-valued sparse randomizer.
///
/// Encoded input: `+c·m·x_r` w.p. `p`, `-c·m·x_r` w.p. `q`, `0` otherwise.
/// Zero input: `±c·sqrt(m)` w.p. `θ` each, `0` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeAtom {
    pub epsilon: f64,
    pub exp_epsilon: f64,
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub c: f64,
}

impl ThreeAtom {
    pub fn basic(epsilon: f64) -> Result<Self, BudgetError> {
        let e = check_budget(epsilon)?;
        Ok(ThreeAtom {
            epsilon,
            exp_epsilon: e,
            p: e / (e + 1.0),
            // Exact complement, so the zero atom has mass exactly 0.
            q: 1.0 - e / (e + 1.0),
            theta: 0.5,
            c: (e + 1.0) / (e - 1.0),
        })
    }

    pub fn extended(epsilon: f64) -> Result<Self, BudgetError> {
        let e = check_budget(epsilon)?;
        Ok(ThreeAtom {
            epsilon,
            exp_epsilon: e,
            p: e / (e + 2.0),
            q: 1.0 / (e + 2.0),
            theta: 1.0 / (e + 2.0),
            c: (e + 2.0) / (e - 1.0),
        })
    }

    /// Noiseless reference mechanism: the sampled coordinate is reported
    /// exactly and the zero input reports nothing.
    pub fn truthful() -> Self {
        ThreeAtom {
            epsilon: f64::INFINITY,
            exp_epsilon: f64::INFINITY,
            p: 1.0,
            q: 0.0,
            theta: 0.0,
            c: 1.0,
        }
    }

    pub fn for_kind(kind: RandomizerKind, epsilon: f64) -> Result<Self, BudgetError> {
        match kind {
            RandomizerKind::Basic => Self::basic(epsilon),
            RandomizerKind::Extended => Self::extended(epsilon),
        }
    }

    /// Probabilities of the output signs `(+, -, 0)` at coordinate `r` for an
    /// input whose `r`-th entry has sign `entry_sign` (`0` for the zero input).
    pub fn atom_probabilities(&self, entry_sign: i8) -> [f64; 3] {
        match entry_sign {
            1 => [self.p, self.q, 1.0 - self.p - self.q],
            -1 => [self.q, self.p, 1.0 - self.p - self.q],
            _ => [self.theta, self.theta, 1.0 - 2.0 * self.theta],
        }
    }

    /// Draw a report. Consumes exactly one `u64` from `rng`: the top five
    /// bits select the coordinate, the low 53 bits form the uniform used for
    /// the branch choice.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, input: Input, rng: &mut R) -> Draw {
        let bits = rng.next_u64();
        let index = (bits >> 59) as u8;
        let u = (bits & ((1 << 53) - 1)) as f64 * (1.0 / (1u64 << 53) as f64);
        match input {
            Input::Word(word) => {
                let entry = word.sign(usize::from(index));
                let sign = if u < self.p {
                    entry
                } else if u < self.p + self.q {
                    -entry
                } else {
                    0
                };
                Draw { index, sign, branch: Branch::Enc }
            }
            Input::Zero => {
                let sign = if u < self.theta {
                    1
                } else if u < 2.0 * self.theta {
                    -1
                } else {
                    0
                };
                Draw { index, sign, branch: Branch::Zero }
            }
        }
    }
}

/// Parameters of the extended randomizer: `p = e^ε/(e^ε+2)`,
/// `q = θ = 1/(e^ε+2)`, `c = (e^ε+2)/(e^ε-1)`.
pub type ExtendedParams = ThreeAtom;

/// Extended randomizer parameters for budget `epsilon`.
pub fn ext_params(epsilon: f64) -> Result<ExtendedParams, BudgetError> {
    ThreeAtom::extended(epsilon)
}

/// Two-valued randomizer: keep the coordinate's sign w.p. `e^ε/(e^ε+1)`,
/// and answer a fair coin for the zero input.
pub fn basic_randomize<R: RngCore + ?Sized>(
    input: Input,
    epsilon: f64,
    rng: &mut R,
) -> Result<Draw, BudgetError> {
    let e = check_budget(epsilon)?;
    let keep = e / (e + 1.0);
    let index = rng.gen_range(0..CODE_LENGTH as u8);
    let draw = match input {
        Input::Word(word) => {
            let entry = word.sign(usize::from(index));
            let sign = if rng.gen::<f64>() < keep { entry } else { -entry };
            Draw { index, sign, branch: Branch::Enc }
        }
        Input::Zero => {
            let sign = if rng.gen::<bool>() { 1 } else { -1 };
            Draw { index, sign, branch: Branch::Zero }
        }
    };
    Ok(draw)
}

/// Three-valued randomizer with the closed-form optimal parameters.
pub fn extended_randomize<R: RngCore + ?Sized>(
    input: Input,
    epsilon: f64,
    rng: &mut R,
) -> Result<Draw, BudgetError> {
    Ok(ext_params(epsilon)?.sample(input, rng))
}

/// Probability that the basic randomizer keeps the true sign.
pub fn basic_keep_probability(epsilon: f64) -> f64 {
    let e = epsilon.exp();
    e / (e + 1.0)
}

/// `(min, max)` of `P[z | x1, r] / P[z | x2, r]` over all output atoms and
/// input pairs, by exact enumeration of the finite support. Atoms with zero
/// probability under both inputs are skipped.
pub fn ldp_ratio_bounds(params: &ThreeAtom) -> (f64, f64) {
    let inputs = [1i8, -1, 0];
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &a in &inputs {
        for &b in &inputs {
            let pa = params.atom_probabilities(a);
            let pb = params.atom_probabilities(b);
            for atom in 0..3 {
                if pa[atom] <= 0.0 && pb[atom] <= 0.0 {
                    continue;
                }
                let ratio = pa[atom] / pb[atom];
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
    }
    (lo, hi)
}

/// Variance of the frequency estimate under the extended randomizer.
pub fn variance_extended(frequency: f64, n: u64, epsilon: f64) -> f64 {
    let prm = ThreeAtom::extended(epsilon).expect("valid budget");
    variance_three_atom(&prm, frequency, n)
}

/// Variance of the frequency estimate under the basic randomizer,
/// `((e^ε+1)/(e^ε-1))^2 - f` over `n`.
pub fn variance_basic(frequency: f64, n: u64, epsilon: f64) -> f64 {
    let e = epsilon.exp();
    let c = (e + 1.0) / (e - 1.0);
    (c * c - frequency) / n as f64
}

/// `(f·(c²(p+q) - 1) + (1-f)·2c²θ) / n` for arbitrary three-atom parameters.
pub fn variance_three_atom(params: &ThreeAtom, frequency: f64, n: u64) -> f64 {
    let c2 = params.c * params.c;
    (frequency * (c2 * (params.p + params.q) - 1.0) + (1.0 - frequency) * 2.0 * c2 * params.theta)
        / n as f64
}

/// Exact budget above which the extended randomizer has the lower estimator
/// variance for true frequency `a ∈ [0, 1)`: the larger root in `t = e^ε` of
/// `(1-a)t² - a·t + (2a-3) = 0`.
pub fn variance_crossover(a: f64) -> f64 {
    assert!((0.0..1.0).contains(&a), "frequency must lie in [0, 1)");
    ((a + (9.0 * a * a - 20.0 * a + 12.0).sqrt()) / (2.0 * (1.0 - a))).ln()
}

/// A looser sufficient condition, `ln((a + sqrt(9a²-20a+12)) / (1-a))`,
/// exactly `ln 2` above [`variance_crossover`].
pub fn variance_crossover_sufficient(a: f64) -> f64 {
    assert!((0.0..1.0).contains(&a), "frequency must lie in [0, 1)");
    ((a + (9.0 * a * a - 20.0 * a + 12.0).sqrt()) / (1.0 - a)).ln()
}

/// Frequency-oracle estimate `(1/n) Σ z_j · x*[r_j]` for a target codeword.
pub fn estimate_frequency_sparse(draws: &[Draw], c: f64, target: Codeword) -> f64 {
    if draws.is_empty() {
        return 0.0;
    }
    let sum: f64 = draws
        .iter()
        .map(|d| d.value(c) * target.entry(usize::from(d.index)))
        .sum();
    sum / draws.len() as f64
}

/// OLH parameters: budget and hash range `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlhParams {
    pub epsilon: f64,
    pub range: u32,
    pub exp_epsilon: f64,
    /// Probability of reporting the true hash, `e^ε/(e^ε+g-1)`.
    pub keep: f64,
}

impl OlhParams {
    pub fn new(epsilon: f64, range: u32) -> Result<Self, BudgetError> {
        let e = check_budget(epsilon)?;
        if range < 2 {
            return Err(BudgetError::RangeTooSmall(range));
        }
        Ok(OlhParams {
            epsilon,
            range,
            exp_epsilon: e,
            keep: e / (e + f64::from(range) - 1.0),
        })
    }

    /// Noiseless reference oracle: every report carries the true hash.
    pub fn truthful(range: u32) -> Self {
        OlhParams {
            epsilon: f64::INFINITY,
            range,
            exp_epsilon: f64::INFINITY,
            keep: 1.0,
        }
    }

    /// `g = round(e^ε) + 1`.
    pub fn with_default_range(epsilon: f64) -> Result<Self, BudgetError> {
        Self::new(epsilon, default_olh_range(epsilon))
    }

    /// Debias a support count `C` out of `n` reports into an estimated count.
    pub fn estimate_count(&self, support: u64, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let g_inv = 1.0 / f64::from(self.range);
        let frac = (support as f64 / n as f64 - g_inv) / (self.keep - g_inv);
        frac * n as f64
    }

    /// Variance of [`OlhParams::estimate_count`] when the target is held by
    /// `count` of `n` users and colliding hashes are uniform.
    pub fn count_variance(&self, count: f64, n: u64) -> f64 {
        let g_inv = 1.0 / f64::from(self.range);
        let n = n as f64;
        let hit_holder = self.keep;
        let hit_other = g_inv;
        let var_support = count * hit_holder * (1.0 - hit_holder) + (n - count) * hit_other * (1.0 - hit_other);
        var_support / (self.keep - g_inv).powi(2)
    }
}

/// Default OLH range `round(e^ε) + 1`, at least 2.
pub fn default_olh_range(epsilon: f64) -> u32 {
    (epsilon.exp().round() as u32 + 1).max(2)
}

/// Seeded multiply-shift hash of a 10-digit value into `[0, g)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OlhHash {
    mul: u64,
    add: u64,
}

impl OlhHash {
    pub fn new(seed: u64) -> Self {
        OlhHash {
            mul: splitmix64(seed) | 1,
            add: splitmix64(seed ^ 0xA5A5_A5A5_A5A5_A5A5),
        }
    }

    #[inline]
    pub fn hash(&self, value: u64, range: u32) -> u32 {
        let h = self.mul.wrapping_mul(value).wrapping_add(self.add) >> 32;
        ((h * u64::from(range)) >> 32) as u32
    }
}

/// An OLH report: the hash seed, the range and the perturbed hash value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OlhReport {
    pub prefix: AreaCode,
    #[serde(with = "hex_u64")]
    pub seed: u64,
    pub g: u32,
    pub value: u32,
}

impl OlhReport {
    /// Whether this report supports `candidate`.
    #[inline]
    pub fn supports(&self, candidate: &PhoneNumber) -> bool {
        OlhHash::new(self.seed).hash(candidate.as_u64(), self.g) == self.value
    }
}

/// Hash `v` under `seed`, then report the hash w.p. `e^ε/(e^ε+g-1)` and a
/// uniformly chosen other value otherwise.
pub fn olh_randomize<R: RngCore + ?Sized>(
    v: &PhoneNumber,
    params: &OlhParams,
    seed: u64,
    rng: &mut R,
) -> OlhReport {
    let truth = OlhHash::new(seed).hash(v.as_u64(), params.range);
    let value = if rng.gen::<f64>() < params.keep {
        truth
    } else {
        let other = rng.gen_range(0..params.range - 1);
        if other >= truth {
            other + 1
        } else {
            other
        }
    };
    OlhReport {
        prefix: v.prefix(),
        seed,
        g: params.range,
        value,
    }
}

pub(crate) mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom("expected 16 hex digits"));
        }
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}
