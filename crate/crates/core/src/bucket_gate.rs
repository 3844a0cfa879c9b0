//! Balls-in-bins fill probabilities.
//!
//! Throwing `n` balls into `l` bins, the number of non-empty bins `b` has
//! `U_{l,n}(b) = S(n,b)·C(l,b)·b! / l^n`, with `S` the Stirling numbers of the
//! second kind. The fill probability `U_{l,n}(l)` is computed from the
//! surjection count `Σ_j (-1)^j C(l,j)(l-j)^n`. All terms are exact big
//! integers until the final division.

use std::sync::RwLock;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// Rows of `S(n, ·)` computed so far, shared across callers.
static STIRLING: RwLock<Vec<Vec<BigUint>>> = RwLock::new(Vec::new());

fn ensure_rows(n: usize) {
    if STIRLING.read().expect("stirling table poisoned").len() > n {
        return;
    }
    let mut table = STIRLING.write().expect("stirling table poisoned");
    if table.is_empty() {
        table.push(vec![BigUint::one()]);
    }
    while table.len() <= n {
        let i = table.len();
        let prev = &table[i - 1];
        let mut row = vec![BigUint::zero(); i + 1];
        for b in 1..=i {
            let mut v = if b < prev.len() { &prev[b] * BigUint::from(b) } else { BigUint::zero() };
            v += &prev[b - 1];
            row[b] = v;
        }
        table.push(row);
    }
}

/// `S(n, b)`, exact.
pub fn stirling2(n: usize, b: usize) -> BigUint {
    if b > n {
        return BigUint::zero();
    }
    ensure_rows(n);
    STIRLING.read().expect("stirling table poisoned")[n][b].clone()
}

fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    // Scale both down so the quotient survives conversion to f64.
    let shift = den.bits().saturating_sub(1000);
    let n = (num >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (den >> shift).to_f64().unwrap_or(f64::INFINITY);
    if n.is_finite() && d.is_finite() {
        return n / d;
    }
    let shift = den.bits().saturating_sub(60);
    (num >> shift).to_f64().unwrap_or(0.0) / (den >> shift).to_f64().unwrap_or(1.0)
}

/// `b!·S(n, b) = Σ_j (-1)^j C(b, j) (b - j)^n`, the number of surjections
/// from `n` balls onto `b` bins.
pub fn surjections(n: usize, b: usize) -> BigUint {
    if b > n {
        return BigUint::zero();
    }
    let (mut pos, mut neg) = (BigUint::zero(), BigUint::zero());
    let mut binom = BigUint::one();
    for j in 0..=b {
        let term = &binom * BigUint::from(b - j).pow(n as u32);
        if j % 2 == 0 {
            pos += term;
        } else {
            neg += term;
        }
        binom = binom * BigUint::from(b - j) / BigUint::from(j + 1);
    }
    pos - neg
}

fn binomial(l: usize, b: usize) -> BigUint {
    (0..b).fold(BigUint::one(), |acc, i| acc * BigUint::from(l - i) / BigUint::from(i + 1))
}

/// Exact numerators of `U_{l,n}(b)` for `b = 0..=min(l, n)`; the common
/// denominator is `l^n`.
pub fn fill_numerators(l: usize, n: usize) -> Vec<BigUint> {
    (0..=l.min(n)).map(|b| surjections(n, b) * binomial(l, b)).collect()
}

/// Distribution of the number of non-empty bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FillDistribution {
    pub l: usize,
    pub n: usize,
    /// `probabilities[b]` for `b = 0..=min(l, n)`.
    pub probabilities: Vec<f64>,
}

impl FillDistribution {
    pub fn probability(&self, b: usize) -> f64 {
        self.probabilities.get(b).copied().unwrap_or(0.0)
    }

    /// `P(at least b bins filled)`.
    pub fn at_least(&self, b: usize) -> f64 {
        self.probabilities.iter().skip(b).sum()
    }
}

pub fn fill_distribution(l: usize, n: usize) -> FillDistribution {
    assert!(l >= 1, "at least one bin");
    let den = BigUint::from(l).pow(n as u32);
    let probabilities = fill_numerators(l, n).iter().map(|x| ratio(x, &den)).collect();
    FillDistribution { l, n, probabilities }
}

/// Probability that all `l` bins are non-empty after `n` balls.
pub fn fill_probability(l: usize, n: usize) -> f64 {
    assert!(l >= 1, "at least one bin");
    if n < l {
        return 0.0;
    }
    ratio(&surjections(n, l), &BigUint::from(l).pow(n as u32))
}

/// Smallest `n` with `fill_probability(l, n) >= target`.
pub fn min_reports_for(l: usize, target: f64) -> usize {
    assert!(target > 0.0 && target < 1.0, "target must lie in (0, 1)");
    let mut hi = l.max(1);
    while fill_probability(l, hi) < target {
        hi *= 2;
    }
    let mut lo = l;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if fill_probability(l, mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Fill targets of the published τ grid.
pub const TAU_TARGETS: [f64; 5] = [0.75, 0.80, 0.85, 0.90, 0.95];

/// Published τ grid.
pub const PUBLISHED_TAUS: [u32; 5] = [143, 151, 161, 174, 195];

/// Bin-count model behind the τ grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauModel {
    /// One bin per payload bit, `l = 24`.
    Payload24,
    /// One bin per codeword coordinate, `l = 32`.
    Codeword32,
    /// All but one codeword coordinate, `l = 31`: one missing coordinate is
    /// corrected by the decoder.
    ErrorCorrected31,
}

impl TauModel {
    pub const ALL: [TauModel; 3] = [TauModel::Payload24, TauModel::Codeword32, TauModel::ErrorCorrected31];

    pub fn bins(self) -> usize {
        match self {
            TauModel::Payload24 => 24,
            TauModel::Codeword32 => 32,
            TauModel::ErrorCorrected31 => 31,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TauModel::Payload24 => "payload-24",
            TauModel::Codeword32 => "codeword-32",
            TauModel::ErrorCorrected31 => "error-corrected-31",
        }
    }
}

/// `min_reports_for(l, p)` for every target.
pub fn tau_table(model: TauModel, targets: &[f64]) -> Vec<usize> {
    targets.iter().map(|&p| min_reports_for(model.bins(), p)).collect()
}

/// Largest absolute deviation of a model's table from the published grid.
pub fn tau_deviation(model: TauModel) -> u32 {
    tau_table(model, &TAU_TARGETS)
        .iter()
        .zip(PUBLISHED_TAUS)
        .map(|(&n, t)| (n as i64 - i64::from(t)).unsigned_abs() as u32)
        .max()
        .unwrap_or(0)
}

/// The model that reproduces the published grid within `tolerance`, if any.
pub fn matching_model(tolerance: u32) -> Option<TauModel> {
    TauModel::ALL.into_iter().find(|&m| tau_deviation(m) <= tolerance)
}
