//! Server side of the bucketized heavy-hitter protocol.
//!
//! A day runs in three phases:
//!
//! 1. Clients announce their prefix in clear; [`Server::publish_go_list`]
//!    admits every bucket with at least `τ` announcements, fixes the channel
//!    count per bucket and draws the round hash family.
//! 2. Sparse and OLH reports are accumulated per `(round, channel, prefix)`
//!    cell. Since every nonzero report value is `±c·sqrt(m)`, a cell only keeps
//!    the per-coordinate sum of signs, which is exact and order-independent.
//! 3. [`Server::finish`] sign-rounds each cell, decodes it, estimates every
//!    candidate's count with the OLH oracle and keeps counts above `τ`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{default_channel_count, HashFamily};
use crate::codec::{decode_codeword, AreaCode, Codeword, PhoneNumber, CODE_LENGTH, SUFFIX_LIMIT};
use crate::par::{self, Exec};
use crate::randomizer::{
    default_olh_range, BudgetError, OlhParams, OlhReport, RandomizerKind, SparseReport, ThreeAtom,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("eps_hh must be positive, got {0}")]
    EpsHh(f64),
    #[error("eps_olh must be positive, got {0}")]
    EpsOlh(f64),
    #[error("rounds must be >= 1")]
    Rounds,
    #[error("tau must be >= 1")]
    Tau,
    #[error("beta must lie in (0, 1), got {0}")]
    Beta(f64),
    #[error("channel count must lie in [1, 65536], got {0}")]
    Channels(u32),
    #[error("code length must be 32, got {0}")]
    CodeLength(usize),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("prefix {0} is not on the go-list")]
    NotAdmitted(AreaCode),
    #[error("report for round {round}, channel {channel} is outside the bucket's {rounds}x{channels} grid")]
    OutOfGrid {
        round: u16,
        channel: u32,
        rounds: u16,
        channels: u32,
    },
    #[error("coordinate {0} outside [1, 32]")]
    Index(u8),
    #[error("sign {0} outside {{-1, 0, 1}}")]
    Sign(i8),
    #[error("OLH report uses range {got}, expected {expected}")]
    OlhRange { got: u32, expected: u32 },
    #[error("OLH value {value} outside [0, {g})")]
    OlhValue { value: u32, g: u32 },
    #[error("no go-list has been published")]
    NoGoList,
}

/// All protocol parameters shared by clients and server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub eps_hh: f64,
    pub eps_olh: f64,
    pub rounds: u16,
    /// Fixed channel count, or `None` for the per-bucket default.
    pub channels: Option<u32>,
    pub code_length: usize,
    pub domain_size: u64,
    pub beta: f64,
    pub tau: u32,
    pub olh_range: u32,
    pub randomizer: RandomizerKind,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            eps_hh: 8.8,
            eps_olh: 3.0,
            rounds: 2,
            channels: None,
            code_length: CODE_LENGTH,
            domain_size: u64::from(SUFFIX_LIMIT),
            beta: 0.751,
            tau: 143,
            olh_range: default_olh_range(3.0),
            randomizer: RandomizerKind::Extended,
        }
    }
}

impl ProtocolParams {
    /// Defaults with the given budgets; the OLH range follows `eps_olh`.
    pub fn with_budgets(eps_hh: f64, eps_olh: f64) -> Self {
        ProtocolParams {
            eps_hh,
            eps_olh,
            olh_range: default_olh_range(eps_olh),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.eps_hh.is_finite() && self.eps_hh > 0.0) {
            return Err(ParamError::EpsHh(self.eps_hh));
        }
        if !(self.eps_olh.is_finite() && self.eps_olh > 0.0) {
            return Err(ParamError::EpsOlh(self.eps_olh));
        }
        if self.rounds == 0 {
            return Err(ParamError::Rounds);
        }
        if self.tau == 0 {
            return Err(ParamError::Tau);
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ParamError::Beta(self.beta));
        }
        if let Some(k) = self.channels {
            if k == 0 || k > 65_536 {
                return Err(ParamError::Channels(k));
            }
        }
        if self.code_length != CODE_LENGTH {
            return Err(ParamError::CodeLength(self.code_length));
        }
        self.sparse_params()?;
        self.olh_params()?;
        Ok(())
    }

    /// Budget of each sparse report, `eps_hh / (2T)`.
    pub fn per_report_epsilon(&self) -> f64 {
        self.eps_hh / (2.0 * f64::from(self.rounds))
    }

    pub fn sparse_params(&self) -> Result<ThreeAtom, BudgetError> {
        ThreeAtom::for_kind(self.randomizer, self.per_report_epsilon())
    }

    pub fn olh_params(&self) -> Result<OlhParams, BudgetError> {
        OlhParams::new(self.eps_olh, self.olh_range)
    }

    /// Channel count for a bucket with `contributors` clients.
    pub fn channels_for(&self, contributors: u64) -> u32 {
        self.channels
            .unwrap_or_else(|| default_channel_count(contributors, self.rounds))
    }

    /// Daily budget spent by a reporting client.
    pub fn total_epsilon(&self) -> f64 {
        self.eps_hh + self.eps_olh
    }
}

/// Protocol plan for one admitted bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketPlan {
    pub prefix: AreaCode,
    pub contributors: u64,
    pub channels: u32,
}

/// The server's go/no-go broadcast: admitted buckets and the hash family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoList {
    pub tau: u32,
    pub family: HashFamily,
    pub buckets: Vec<BucketPlan>,
}

impl GoList {
    pub fn plan(&self, prefix: AreaCode) -> Option<&BucketPlan> {
        self.buckets
            .binary_search_by_key(&prefix, |b| b.prefix)
            .ok()
            .map(|i| &self.buckets[i])
    }

    pub fn admits(&self, prefix: AreaCode) -> bool {
        self.plan(prefix).is_some()
    }

    /// Hash family for a bucket's channel count.
    pub fn family_for(&self, plan: &BucketPlan) -> HashFamily {
        self.family.with_channels(plan.channels)
    }
}

/// Prefixes whose announcement count reaches `tau`.
pub fn admit_buckets(prefix_counts: &BTreeMap<AreaCode, u64>, tau: u32) -> BTreeSet<AreaCode> {
    prefix_counts
        .iter()
        .filter(|(_, &n)| n >= u64::from(tau))
        .map(|(&p, _)| p)
        .collect()
}

/// `η = (2T+1)/ε · sqrt(ln(d)·ln(1/β) / n)`, natural logarithms.
pub fn eta_threshold(rounds: u16, epsilon: f64, domain_size: f64, beta: f64, n: f64) -> f64 {
    (2.0 * f64::from(rounds) + 1.0) / epsilon * (domain_size.ln() * (1.0 / beta).ln() / n).sqrt()
}

/// Mean the cell and round each coordinate, `>= 0` going to `+1/sqrt(m)`.
pub fn aggregate_and_round(sum: &[f64], n: u64) -> Codeword {
    assert!(n >= 1, "empty cell");
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    Codeword::from_signs(&mean)
}

/// Per-bucket accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketAggregate {
    pub prefix: AreaCode,
    pub rounds: u16,
    pub channels: u32,
    /// Per-cell coordinate sums of report signs, cell `(t-1)·K + (k-1)`.
    sign_sums: Vec<[i64; CODE_LENGTH]>,
    cell_reports: Vec<u64>,
    olh: Vec<OlhReport>,
}

impl BucketAggregate {
    pub fn new(prefix: AreaCode, rounds: u16, channels: u32) -> Self {
        let cells = usize::from(rounds) * channels as usize;
        BucketAggregate {
            prefix,
            rounds,
            channels,
            sign_sums: vec![[0; CODE_LENGTH]; cells],
            cell_reports: vec![0; cells],
            olh: Vec::new(),
        }
    }

    fn cell(&self, round: u16, channel: u32) -> usize {
        usize::from(round - 1) * self.channels as usize + (channel - 1) as usize
    }

    pub fn add_sparse(&mut self, report: &SparseReport) -> Result<(), IngestError> {
        if report.round == 0
            || report.round > self.rounds
            || report.channel == 0
            || report.channel > self.channels
        {
            return Err(IngestError::OutOfGrid {
                round: report.round,
                channel: report.channel,
                rounds: self.rounds,
                channels: self.channels,
            });
        }
        if report.index == 0 || usize::from(report.index) > CODE_LENGTH {
            return Err(IngestError::Index(report.index));
        }
        if !(-1..=1).contains(&report.sign) {
            return Err(IngestError::Sign(report.sign));
        }
        let cell = self.cell(report.round, report.channel);
        self.sign_sums[cell][report.coordinate()] += i64::from(report.sign);
        self.cell_reports[cell] += 1;
        Ok(())
    }

    /// Hot-path variant for in-process simulation: `coordinate` is 0-based
    /// and the grid position is trusted.
    #[inline]
    pub(crate) fn add_draw(&mut self, round: u16, channel: u32, coordinate: usize, sign: i8) {
        let cell = self.cell(round, channel);
        self.sign_sums[cell][coordinate] += i64::from(sign);
        self.cell_reports[cell] += 1;
    }

    pub fn add_olh(&mut self, report: OlhReport) {
        self.olh.push(report);
    }

    /// Fold another partial aggregate of the same bucket into this one.
    pub fn merge(&mut self, other: BucketAggregate) {
        assert_eq!(
            (self.prefix, self.rounds, self.channels),
            (other.prefix, other.rounds, other.channels),
            "merging mismatched buckets"
        );
        for (a, b) in self.sign_sums.iter_mut().zip(&other.sign_sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.cell_reports.iter_mut().zip(&other.cell_reports) {
            *a += b;
        }
        self.olh.extend(other.olh);
    }

    /// Number of clients, counted by their OLH reports.
    pub fn contributors(&self) -> u64 {
        self.olh.len() as u64
    }

    pub fn cell_reports(&self, round: u16, channel: u32) -> u64 {
        self.cell_reports[self.cell(round, channel)]
    }

    pub fn olh_reports(&self) -> &[OlhReport] {
        &self.olh
    }

    /// Real-valued sum `Σ z_j` of a cell for scale `c`.
    pub fn cell_sum(&self, round: u16, channel: u32, c: f64) -> [f64; CODE_LENGTH] {
        let scale = c * (CODE_LENGTH as f64).sqrt();
        let sums = &self.sign_sums[self.cell(round, channel)];
        std::array::from_fn(|i| sums[i] as f64 * scale)
    }

    /// Mean report vector of a cell for scale `c`.
    pub fn cell_mean(&self, round: u16, channel: u32, c: f64) -> Option<[f64; CODE_LENGTH]> {
        let n = self.cell_reports(round, channel);
        if n == 0 {
            return None;
        }
        let sum = self.cell_sum(round, channel, c);
        Some(std::array::from_fn(|i| sum[i] / n as f64))
    }

    /// Sign-rounded word of a cell; `None` for an empty cell.
    pub fn rounded(&self, round: u16, channel: u32) -> Option<Codeword> {
        let cell = self.cell(round, channel);
        if self.cell_reports[cell] == 0 {
            return None;
        }
        let mut mask = 0u32;
        for (i, &s) in self.sign_sums[cell].iter().enumerate() {
            if s >= 0 {
                mask |= 1 << i;
            }
        }
        Some(Codeword::from_mask(mask))
    }
}

/// Reconstructed candidates with their estimated counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub entries: BTreeMap<PhoneNumber, f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, v: &PhoneNumber) -> bool {
        self.entries.contains_key(v)
    }

    pub fn insert(&mut self, v: PhoneNumber) {
        self.entries.entry(v).or_insert(0.0);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub cells: u64,
    pub empty_cells: u64,
    pub decode_failures: u64,
}

/// Decode every `(t, k)` cell of every bucket and collect the distinct
/// reconstructed caller IDs. Failed decodes are counted and skipped.
pub fn reconstruct_candidates(
    buckets: &BTreeMap<AreaCode, BucketAggregate>,
    exec: Exec,
) -> (CandidateSet, ReconstructionStats) {
    let list: Vec<&BucketAggregate> = buckets.values().collect();
    let per_bucket = par::map(exec, &list, |bucket| {
        let mut found = Vec::new();
        let mut stats = ReconstructionStats::default();
        for t in 1..=bucket.rounds {
            for k in 1..=bucket.channels {
                stats.cells += 1;
                let Some(word) = bucket.rounded(t, k) else {
                    stats.empty_cells += 1;
                    continue;
                };
                match decode_codeword(word) {
                    Ok(suffix) => {
                        found.push(PhoneNumber::new(bucket.prefix, suffix).expect("decoded suffix < 10^7"))
                    }
                    Err(_) => stats.decode_failures += 1,
                }
            }
        }
        (found, stats)
    });
    let mut set = CandidateSet::default();
    let mut stats = ReconstructionStats::default();
    for (found, s) in per_bucket {
        for v in found {
            set.insert(v);
        }
        stats.cells += s.cells;
        stats.empty_cells += s.empty_cells;
        stats.decode_failures += s.decode_failures;
    }
    (set, stats)
}

/// OLH count estimate of `candidate` from the bucket's reports:
/// `n·(C/n - 1/g)/(p* - 1/g)` where `C` counts supporting reports.
pub fn estimate_frequency(candidate: &PhoneNumber, reports: &[OlhReport], olh: &OlhParams) -> f64 {
    let support = reports.iter().filter(|r| r.supports(candidate)).count() as u64;
    olh.estimate_count(support, reports.len() as u64)
}

/// A published heavy hitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeavyHitter {
    pub caller_id: PhoneNumber,
    pub estimate: f64,
}

/// Keep candidates whose estimated count is strictly above `tau`.
pub fn filter_and_emit(candidates: &CandidateSet, tau: u32) -> Vec<HeavyHitter> {
    candidates
        .entries
        .iter()
        .filter(|(_, &est)| est > f64::from(tau))
        .map(|(&caller_id, &estimate)| HeavyHitter { caller_id, estimate })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub announcements: u64,
    pub admitted_buckets: u64,
    pub contributors: u64,
    pub sparse_reports: u64,
    pub olh_reports: u64,
    pub rejected_reports: u64,
    pub reconstruction: ReconstructionStats,
    pub excluded: u64,
}

/// Output of one protocol day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub candidates: CandidateSet,
    pub heavy_hitters: Vec<HeavyHitter>,
    /// `η` per admitted bucket, logged for comparison with `τ`.
    pub eta: BTreeMap<AreaCode, f64>,
    pub stats: ServerStats,
}

impl DayResult {
    pub fn estimates(&self) -> BTreeMap<PhoneNumber, f64> {
        self.heavy_hitters
            .iter()
            .map(|h| (h.caller_id, h.estimate))
            .collect()
    }
}

/// Single-writer server state for one day.
#[derive(Debug, Clone)]
pub struct Server {
    params: ProtocolParams,
    sparse: ThreeAtom,
    olh: OlhParams,
    announcements: BTreeMap<AreaCode, u64>,
    go_list: Option<GoList>,
    buckets: BTreeMap<AreaCode, BucketAggregate>,
    exclusions: BTreeSet<PhoneNumber>,
    stats: ServerStats,
    exec: Exec,
}

impl Server {
    pub fn new(params: ProtocolParams) -> Result<Self, ParamError> {
        params.validate()?;
        Ok(Server {
            sparse: params.sparse_params()?,
            olh: params.olh_params()?,
            params,
            announcements: BTreeMap::new(),
            go_list: None,
            buckets: BTreeMap::new(),
            exclusions: BTreeSet::new(),
            stats: ServerStats::default(),
            exec: Exec::default(),
        })
    }

    /// Replace the mechanisms derived from the parameters, e.g. with the
    /// noiseless references.
    pub fn with_mechanisms(mut self, sparse: ThreeAtom, olh: OlhParams) -> Self {
        self.sparse = sparse;
        self.olh = olh;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Caller IDs never published (e.g. a reverse-lookup whitelist).
    pub fn with_exclusions(mut self, exclusions: BTreeSet<PhoneNumber>) -> Self {
        self.exclusions = exclusions;
        self
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn announce(&mut self, prefix: AreaCode) {
        *self.announcements.entry(prefix).or_insert(0) += 1;
        self.stats.announcements += 1;
    }

    pub fn announce_count(&mut self, prefix: AreaCode, count: u64) {
        *self.announcements.entry(prefix).or_insert(0) += count;
        self.stats.announcements += count;
    }

    pub fn announcements(&self) -> &BTreeMap<AreaCode, u64> {
        &self.announcements
    }

    /// Admit buckets, draw the round hashes and open the accumulators.
    pub fn publish_go_list<R: Rng + ?Sized>(&mut self, rng: &mut R) -> GoList {
        let admitted = admit_buckets(&self.announcements, self.params.tau);
        let family = HashFamily::random(self.params.rounds, 1, rng);
        let buckets: Vec<BucketPlan> = admitted
            .into_iter()
            .map(|prefix| {
                let contributors = self.announcements[&prefix];
                BucketPlan {
                    prefix,
                    contributors,
                    channels: self.params.channels_for(contributors),
                }
            })
            .collect();
        self.buckets = buckets
            .iter()
            .map(|b| (b.prefix, BucketAggregate::new(b.prefix, self.params.rounds, b.channels)))
            .collect();
        self.stats.admitted_buckets = buckets.len() as u64;
        let go = GoList {
            tau: self.params.tau,
            family,
            buckets,
        };
        self.go_list = Some(go.clone());
        go
    }

    pub fn go_list(&self) -> Option<&GoList> {
        self.go_list.as_ref()
    }

    pub fn ingest_sparse(&mut self, report: &SparseReport) -> Result<(), IngestError> {
        if self.go_list.is_none() {
            return Err(IngestError::NoGoList);
        }
        let result = match self.buckets.get_mut(&report.prefix) {
            Some(bucket) => bucket.add_sparse(report),
            None => Err(IngestError::NotAdmitted(report.prefix)),
        };
        match result {
            Ok(()) => self.stats.sparse_reports += 1,
            Err(_) => self.stats.rejected_reports += 1,
        }
        result
    }

    pub fn ingest_olh(&mut self, report: &OlhReport) -> Result<(), IngestError> {
        if self.go_list.is_none() {
            return Err(IngestError::NoGoList);
        }
        let result = if report.g != self.olh.range {
            Err(IngestError::OlhRange {
                got: report.g,
                expected: self.olh.range,
            })
        } else if report.value >= report.g {
            Err(IngestError::OlhValue {
                value: report.value,
                g: report.g,
            })
        } else {
            match self.buckets.get_mut(&report.prefix) {
                Some(bucket) => {
                    bucket.add_olh(*report);
                    Ok(())
                }
                None => Err(IngestError::NotAdmitted(report.prefix)),
            }
        };
        match result {
            Ok(()) => self.stats.olh_reports += 1,
            Err(_) => self.stats.rejected_reports += 1,
        }
        result
    }

    /// Merge a partial aggregate built elsewhere (e.g. by a worker thread).
    pub fn merge_bucket(&mut self, partial: BucketAggregate) -> Result<(), IngestError> {
        let bucket = self
            .buckets
            .get_mut(&partial.prefix)
            .ok_or(IngestError::NotAdmitted(partial.prefix))?;
        self.stats.sparse_reports += partial.cell_reports.iter().sum::<u64>();
        self.stats.olh_reports += partial.olh.len() as u64;
        bucket.merge(partial);
        Ok(())
    }

    pub fn buckets(&self) -> &BTreeMap<AreaCode, BucketAggregate> {
        &self.buckets
    }

    /// Empty accumulators matching the current go-list, for workers.
    pub fn empty_buckets(&self) -> BTreeMap<AreaCode, BucketAggregate> {
        self.buckets
            .values()
            .map(|b| (b.prefix, BucketAggregate::new(b.prefix, b.rounds, b.channels)))
            .collect()
    }

    /// Reconstruct, estimate and filter.
    pub fn finish(mut self) -> DayResult {
        let (mut candidates, recon) = reconstruct_candidates(&self.buckets, self.exec);
        self.stats.reconstruction = recon;
        self.stats.contributors = self.buckets.values().map(|b| b.contributors()).sum();
        let olh = self.olh;
        let keys: Vec<PhoneNumber> = candidates.entries.keys().copied().collect();
        let buckets = &self.buckets;
        let estimates = par::map(self.exec, &keys, |v| {
            buckets
                .get(&v.prefix())
                .map(|b| estimate_frequency(v, b.olh_reports(), &olh))
                .unwrap_or(0.0)
        });
        for (v, est) in keys.iter().zip(estimates) {
            candidates.entries.insert(*v, est);
        }
        let mut heavy_hitters = filter_and_emit(&candidates, self.params.tau);
        let before = heavy_hitters.len();
        heavy_hitters.retain(|h| !self.exclusions.contains(&h.caller_id));
        self.stats.excluded = (before - heavy_hitters.len()) as u64;
        let eta = self
            .buckets
            .values()
            .filter(|b| b.contributors() > 0)
            .map(|b| {
                (
                    b.prefix,
                    eta_threshold(
                        self.params.rounds,
                        self.params.total_epsilon(),
                        self.params.domain_size as f64,
                        self.params.beta,
                        b.contributors() as f64,
                    ),
                )
            })
            .collect();
        log::debug!(
            "server day: {} buckets, {} candidates, {} heavy hitters, {} decode failures",
            self.buckets.len(),
            candidates.len(),
            heavy_hitters.len(),
            self.stats.reconstruction.decode_failures
        );
        DayResult {
            candidates,
            heavy_hitters,
            eta,
            stats: self.stats,
        }
    }

    /// Scale `c` of the sparse randomizer in use.
    pub fn scale(&self) -> f64 {
        self.sparse.c
    }
}
