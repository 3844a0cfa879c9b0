//! Client side of the bucketized heavy-hitter protocol.
//!
//! Each day a client samples one unknown caller, announces its prefix, and if
//! the bucket is admitted sends `T·K` sparse reports of the encoded suffix and
//! one OLH report of the full number.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_suffix, AreaCode, PhoneNumber};
use crate::randomizer::{olh_randomize, Draw, Input, OlhParams, OlhReport, SparseReport, ThreeAtom};
use crate::server::{GoList, ProtocolParams};

/// Days a reported caller stays in the dedup history.
pub const DEDUP_WINDOW_DAYS: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("no caller left to sample")]
    EmptySet,
}

/// What a client with nothing to report does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyPolicy {
    #[default]
    SendDummy,
    Abstain,
}

impl std::fmt::Display for DummyPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DummyPolicy::SendDummy => "send_dummy",
            DummyPolicy::Abstain => "abstain",
        })
    }
}

impl std::str::FromStr for DummyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "send_dummy" | "dummy" => Ok(DummyPolicy::SendDummy),
            "abstain" => Ok(DummyPolicy::Abstain),
            other => Err(format!("unknown dummy policy {other:?} (expected send_dummy or abstain)")),
        }
    }
}

/// Uniform sample over the distinct caller IDs in `calls`, skipping any in
/// `exclude`.
pub fn sample_item<R: Rng + ?Sized>(
    calls: &[PhoneNumber],
    exclude: &BTreeSet<PhoneNumber>,
    rng: &mut R,
) -> Result<PhoneNumber, ClientError> {
    let distinct: Vec<PhoneNumber> = calls
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|v| !exclude.contains(v))
        .collect();
    if distinct.is_empty() {
        return Err(ClientError::EmptySet);
    }
    Ok(distinct[rng.gen_range(0..distinct.len())])
}

/// A random valid-looking number: first digit in `[2, 9]`, the other nine
/// uniform.
pub fn dummy_number<R: Rng + ?Sized>(rng: &mut R) -> PhoneNumber {
    let value = rng.gen_range(2_000_000_000u64..10_000_000_000);
    PhoneNumber::from_u64(value).expect("first digit in [2, 9]")
}

/// Per-client state carried across days.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientState {
    pub dedup: bool,
    /// Reported caller and the day it was last reported.
    history: BTreeMap<PhoneNumber, NaiveDate>,
}

impl ClientState {
    pub fn new(dedup: bool) -> Self {
        ClientState {
            dedup,
            history: BTreeMap::new(),
        }
    }

    /// Callers excluded from sampling on `date`.
    pub fn excluded(&self, date: NaiveDate) -> BTreeSet<PhoneNumber> {
        if !self.dedup {
            return BTreeSet::new();
        }
        self.history
            .iter()
            .filter(|(_, &d)| (date - d).num_days() < DEDUP_WINDOW_DAYS)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Pick the day's caller, or `None` when nothing is left.
    pub fn choose<R: Rng + ?Sized>(&self, calls: &[PhoneNumber], date: NaiveDate, rng: &mut R) -> Option<PhoneNumber> {
        sample_item(calls, &self.excluded(date), rng).ok()
    }

    pub fn record(&mut self, v: PhoneNumber, date: NaiveDate) {
        if self.dedup {
            self.history.insert(v, date);
            self.history.retain(|_, d| (date - *d).num_days() < DEDUP_WINDOW_DAYS);
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// A client's output for one day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientDay {
    pub sparse: Vec<SparseReport>,
    pub olh: Option<OlhReport>,
    /// Budget spent, `ε_HH + ε_OLH` when reporting, else 0.
    pub spent: f64,
}

/// Run the client for held caller `v`, writing sparse reports to `sink` in
/// round-major, channel-minor order. Returns the OLH report and the spent
/// budget, or `None` when the prefix is not admitted.
///
/// All sparse reports are drawn from `rng` first, then the OLH seed and
/// perturbation.
pub fn emit<R, F>(
    v: &PhoneNumber,
    params: &ProtocolParams,
    sparse: &ThreeAtom,
    olh: &OlhParams,
    go_list: &GoList,
    rng: &mut R,
    mut sink: F,
) -> Option<(OlhReport, f64)>
where
    R: RngCore + ?Sized,
    F: FnMut(u16, u32, Draw),
{
    let plan = go_list.plan(v.prefix())?;
    let word = encode_suffix(v.suffix()).expect("suffix in range");
    let family = &go_list.family;
    let channels = plan.channels;
    for t in 1..=params.rounds {
        let (a, b) = family.coefficients[usize::from(t) - 1];
        let own = ((a * u64::from(v.suffix()) + b) % family.modulus % u64::from(channels)) as u32 + 1;
        for k in 1..=channels {
            let input = if k == own { Input::Word(word) } else { Input::Zero };
            sink(t, k, sparse.sample(input, rng));
        }
    }
    let seed = rng.next_u64();
    let report = olh_randomize(v, olh, seed, rng);
    Some((report, params.total_epsilon()))
}

/// Run the client for held caller `v` against the day's go-list.
pub fn run_client_day<R: RngCore + ?Sized>(
    v: &PhoneNumber,
    params: &ProtocolParams,
    go_list: &GoList,
    rng: &mut R,
) -> ClientDay {
    let sparse_params = params.sparse_params().expect("validated params");
    let olh_params = params.olh_params().expect("validated params");
    let prefix: AreaCode = v.prefix();
    let mut sparse = Vec::new();
    match emit(v, params, &sparse_params, &olh_params, go_list, rng, |t, k, d| {
        sparse.push(SparseReport::new(t, k, prefix, d))
    }) {
        Some((olh, spent)) => ClientDay {
            sparse,
            olh: Some(olh),
            spent,
        },
        None => ClientDay::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::HashFamily;
    use crate::randomizer::Branch;
    use crate::server::BucketPlan;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn go_list(prefix: &str, channels: u32, rounds: u16, rng: &mut ChaCha8Rng) -> GoList {
        GoList {
            tau: 143,
            family: HashFamily::random(rounds, 1, rng),
            buckets: vec![BucketPlan {
                prefix: prefix.parse().unwrap(),
                contributors: 1000,
                channels,
            }],
        }
    }

    #[test]
    fn singleton_sample() {
        let v = PhoneNumber::parse("2025550142").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_item(&[v, v, v], &BTreeSet::new(), &mut rng), Ok(v));
        assert_eq!(sample_item(&[], &BTreeSet::new(), &mut rng), Err(ClientError::EmptySet));
    }

    #[test]
    fn sample_is_uniform_over_distinct_ids() {
        let a = PhoneNumber::parse("2025550142").unwrap();
        let b = PhoneNumber::parse("3125550100").unwrap();
        // `a` appears three times but must still be drawn half the time.
        let calls = [a, a, a, b];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| sample_item(&calls, &BTreeSet::new(), &mut rng).unwrap() == a)
            .count();
        let sd = (trials as f64 * 0.25).sqrt();
        assert!((hits as f64 - 5000.0).abs() < 3.0 * sd, "hits {hits}");
    }

    #[test]
    fn dedup_excludes_recent_reports() {
        let a = PhoneNumber::parse("2025550142").unwrap();
        let b = PhoneNumber::parse("3125550100").unwrap();
        let day = NaiveDate::from_ymd_opt(2016, 2, 17).unwrap();
        let mut state = ClientState::new(true);
        state.record(a, day);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(state.choose(&[a, b], day + chrono::Days::new(29), &mut rng), Some(b));
        }
        assert_eq!(state.choose(&[a], day + chrono::Days::new(1), &mut rng), None);
        assert_eq!(state.choose(&[a], day + chrono::Days::new(30), &mut rng), Some(a));
        let off = ClientState::new(false);
        assert_eq!(off.choose(&[a], day, &mut rng), Some(a));
    }

    #[test]
    fn dummy_numbers_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let v = dummy_number(&mut rng);
            let s = v.digits();
            assert!(!s.starts_with('0') && !s.starts_with('1'));
            assert_eq!(crate::codec::parse_caller_id(&s), Ok(v));
        }
    }

    #[test]
    fn dummy_prefixes_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0u32; 800];
        let draws = 100_000;
        for _ in 0..draws {
            counts[usize::from(dummy_number(&mut rng).prefix().value()) - 200] += 1;
        }
        let expected = f64::from(draws) / 800.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| (f64::from(o) - expected).powi(2) / expected)
            .sum();
        // 799 degrees of freedom: mean 799, sd 40.
        assert!(chi2 < 799.0 + 5.0 * 40.0, "chi2 {chi2}");
    }

    #[test]
    fn report_counts_and_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let go = go_list("202", 8, 2, &mut rng);
        let params = ProtocolParams::default();
        let v = PhoneNumber::parse("2025550142").unwrap();
        let day = run_client_day(&v, &params, &go, &mut rng);
        assert_eq!(day.sparse.len(), 16);
        assert!(day.olh.is_some());
        assert!((day.spent - 11.8).abs() < 1e-12);
        let enc = day.sparse.iter().filter(|r| r.branch == Branch::Enc).count();
        assert_eq!(enc, 2);
        for t in 1..=2 {
            let own = go.family.with_channels(8).channel_of(v.suffix(), t);
            let r = day.sparse.iter().find(|r| r.round == t && r.branch == Branch::Enc).unwrap();
            assert_eq!(r.channel, own);
        }
        let order: Vec<(u16, u32)> = day.sparse.iter().map(|r| (r.round, r.channel)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert!(day.sparse.iter().all(|r| r.prefix == v.prefix()));
    }

    #[test]
    fn gated_client_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let go = go_list("202", 8, 2, &mut rng);
        let v = PhoneNumber::parse("3125550100").unwrap();
        let day = run_client_day(&v, &ProtocolParams::default(), &go, &mut rng);
        assert!(day.sparse.is_empty());
        assert!(day.olh.is_none());
        assert_eq!(day.spent, 0.0);
    }

    #[test]
    fn truthful_probability_at_default_budget() {
        let p = ProtocolParams::default().sparse_params().unwrap().p;
        let e = 2.2f64.exp();
        assert!((p - e / (e + 2.0)).abs() < 1e-12);
        assert!((p - 0.818).abs() < 1e-3);
    }

    /// Distribution of one sparse report over `(index, sign)` for a toy code
    /// of length `m`; `signs[j]` is the input's sign at `j`, 0 for the zero input.
    fn report_dist(prm: &ThreeAtom, signs: &[i8]) -> Vec<f64> {
        let m = signs.len() as f64;
        let mut out = Vec::new();
        for &s in signs {
            let [plus, minus, zero] = prm.atom_probabilities(s);
            out.extend([plus / m, minus / m, zero / m]);
        }
        out
    }

    #[test]
    fn toy_composition_bound() {
        // m = 4 toy code, K = 2 channels, T = 1 round. A client's transcript
        // is one report per channel; the held item picks which channel
        // carries its codeword.
        let words: [[i8; 4]; 4] = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [-1, -1, -1, -1]];
        let zero = [0i8; 4];
        for eps_hh in [1.0, 4.4, 8.8] {
            for prm in [ThreeAtom::extended(eps_hh / 2.0).unwrap(), ThreeAtom::basic(eps_hh / 2.0).unwrap()] {
                let mut worst = 0f64;
                // item = (word, channel)
                let items: Vec<(usize, usize)> = (0..4).flat_map(|w| (0..2).map(move |k| (w, k))).collect();
                let transcript = |&(w, k): &(usize, usize)| -> Vec<f64> {
                    let per: Vec<Vec<f64>> = (0..2)
                        .map(|c| report_dist(&prm, if c == k { &words[w] } else { &zero }))
                        .collect();
                    let mut joint = Vec::new();
                    for a in &per[0] {
                        for b in &per[1] {
                            joint.push(a * b);
                        }
                    }
                    joint
                };
                for x in &items {
                    for y in &items {
                        let (px, py) = (transcript(x), transcript(y));
                        let total: f64 = px.iter().sum();
                        assert!((total - 1.0).abs() < 1e-12);
                        for (a, b) in px.iter().zip(&py) {
                            if *b > 0.0 {
                                worst = worst.max(a / b);
                            }
                        }
                    }
                }
                assert!(worst <= eps_hh.exp() * (1.0 + 1e-9), "eps {eps_hh}: {worst}");
            }
        }
    }

    #[test]
    fn policy_parse() {
        assert_eq!("abstain".parse::<DummyPolicy>(), Ok(DummyPolicy::Abstain));
        assert_eq!(DummyPolicy::default().to_string(), "send_dummy");
        assert!("x".parse::<DummyPolicy>().is_err());
    }
}
