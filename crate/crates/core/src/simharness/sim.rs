//! Daily protocol orchestration and experiment metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::Serialize;

use super::dataset::count_calls;
use crate::blacklist::{cbr, classify, f1, true_heavy_hitters, Blacklist, Tally, DEFAULT_WINDOW_DAYS};
use crate::client::{dummy_number, emit, ClientState, DummyPolicy};
use crate::codec::{AreaCode, PhoneNumber};
use crate::par::{self, Exec};
use crate::randomizer::{OlhParams, SparseReport, ThreeAtom};
use crate::seed;
use crate::server::{BucketAggregate, BucketPlan, GoList, HeavyHitter, ParamError, ProtocolParams, Server, ServerStats};
use crate::transport::{self, Envelope, HhPublish, Inbox, Outbox, Payload, PrefixAnnounce};

/// Full-scale daily population.
pub const DEFAULT_USERS: usize = 23_188;

/// Clients per parallel work item.
const CHUNK: usize = 256;

/// How reports reach the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireMode {
    /// Reports are accumulated in process.
    #[default]
    Direct,
    /// Every message is encoded, sent over the loopback carrier and decoded.
    Loopback,
    /// As `Loopback`, with the report messages delivered in a random order.
    Shuffled,
}

impl std::fmt::Display for WireMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WireMode::Direct => "direct",
            WireMode::Loopback => "loopback",
            WireMode::Shuffled => "shuffled",
        })
    }
}

impl std::str::FromStr for WireMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(WireMode::Direct),
            "loopback" => Ok(WireMode::Loopback),
            "shuffled" => Ok(WireMode::Shuffled),
            other => Err(format!("unknown wire mode {other:?} (expected direct, loopback or shuffled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: ProtocolParams,
    pub n_users: usize,
    pub dummy: DummyPolicy,
    pub dedup: bool,
    pub window: u32,
    pub exec: Exec,
    pub wire: WireMode,
    /// Replace both randomizers with their noiseless references.
    pub noiseless: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            params: ProtocolParams::default(),
            n_users: DEFAULT_USERS,
            dummy: DummyPolicy::SendDummy,
            dedup: false,
            window: DEFAULT_WINDOW_DAYS,
            exec: Exec::default(),
            wire: WireMode::Direct,
            noiseless: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.params.validate()
    }

    fn mechanisms(&self) -> (ThreeAtom, OlhParams) {
        if self.noiseless {
            (ThreeAtom::truthful(), OlhParams::truthful(self.params.olh_range))
        } else {
            (
                self.params.sparse_params().expect("validated params"),
                self.params.olh_params().expect("validated params"),
            )
        }
    }
}

/// Simulated users and their carried state.
#[derive(Debug, Clone)]
pub struct Population {
    pub n_users: usize,
    clients: Vec<ClientState>,
}

impl Population {
    pub fn new(config: &PipelineConfig) -> Self {
        Population {
            n_users: config.n_users,
            clients: if config.dedup {
                vec![ClientState::new(true); config.n_users]
            } else {
                Vec::new()
            },
        }
    }
}

/// Result of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayOutcome {
    pub date: NaiveDate,
    pub complaints: usize,
    pub participants: usize,
    pub dummies: usize,
    pub abstained: usize,
    pub admitted: Vec<BucketPlan>,
    pub heavy_hitters: Vec<HeavyHitter>,
    pub tally: Tally,
    /// Callers with a true count above `τ`.
    pub true_heavy: usize,
    pub stats: ServerStats,
    pub eta: BTreeMap<AreaCode, f64>,
    /// Total privacy budget spent across clients.
    pub spent: f64,
}

impl DayOutcome {
    pub fn published(&self) -> impl Iterator<Item = &PhoneNumber> {
        self.heavy_hitters.iter().map(|h| &h.caller_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outcome serializes")
    }
}

struct Participant {
    user: usize,
    held: PhoneNumber,
    real: bool,
}

fn user_seed(day_seed: u64, user: usize) -> u64 {
    seed::derive(day_seed, seed::USER, user as u64)
}

fn report_rng(day_seed: u64, user: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive(user_seed(day_seed, user), seed::REPORT, 0))
}

/// Assign complaints to distinct users and decide what every user holds.
fn assign(
    date: NaiveDate,
    calls: &[PhoneNumber],
    config: &PipelineConfig,
    pop: &Population,
    day_seed: u64,
) -> (Vec<Participant>, usize, usize) {
    let n = pop.n_users.max(calls.len());
    if n > pop.n_users {
        log::warn!("{date}: {} complaints exceed the {} simulated users", calls.len(), pop.n_users);
    }
    let mut users: Vec<usize> = (0..n).collect();
    users.shuffle(&mut seed::rng(seed::derive(day_seed, seed::ASSIGN, 0)));
    let mut held: Vec<Option<PhoneNumber>> = vec![None; n];
    for (v, &u) in calls.iter().zip(&users) {
        let keep = match pop.clients.get(u) {
            Some(state) => state.choose(std::slice::from_ref(v), date, &mut seed::rng(0)).is_some(),
            None => true,
        };
        if keep {
            held[u] = Some(*v);
        }
    }
    let (mut dummies, mut abstained) = (0, 0);
    let mut out = Vec::with_capacity(n);
    for (user, h) in held.into_iter().enumerate() {
        match (h, config.dummy) {
            (Some(v), _) => out.push(Participant { user, held: v, real: true }),
            (None, DummyPolicy::SendDummy) => {
                dummies += 1;
                let mut rng = seed::rng(seed::derive(user_seed(day_seed, user), seed::HOLD, 0));
                out.push(Participant {
                    user,
                    held: dummy_number(&mut rng),
                    real: false,
                });
            }
            (None, DummyPolicy::Abstain) => abstained += 1,
        }
    }
    (out, dummies, abstained)
}

/// Run every admitted client in process, bucket by bucket.
fn collect_direct(
    participants: &[Participant],
    config: &PipelineConfig,
    go: &GoList,
    server: &mut Server,
    day_seed: u64,
) {
    let (sparse, olh) = config.mechanisms();
    let mut by_bucket: BTreeMap<AreaCode, Vec<&Participant>> = BTreeMap::new();
    for p in participants {
        if go.admits(p.held.prefix()) {
            by_bucket.entry(p.held.prefix()).or_default().push(p);
        }
    }
    let jobs: Vec<(&BucketPlan, &[&Participant])> = by_bucket
        .iter()
        .flat_map(|(prefix, members)| {
            let plan = go.plan(*prefix).expect("admitted");
            members.chunks(CHUNK).map(move |c| (plan, c))
        })
        .collect();
    let partials = par::map(config.exec, &jobs, |(plan, members)| {
        let mut agg = BucketAggregate::new(plan.prefix, config.params.rounds, plan.channels);
        for p in members.iter() {
            let mut rng = report_rng(day_seed, p.user);
            let (report, _) = emit(&p.held, &config.params, &sparse, &olh, go, &mut rng, |t, k, d| {
                agg.add_draw(t, k, usize::from(d.index), d.sign)
            })
            .expect("admitted prefix");
            agg.add_olh(report);
        }
        agg
    });
    for agg in partials {
        server.merge_bucket(agg).expect("bucket on go-list");
    }
}

/// Run every client through the loopback carrier.
fn collect_wire(
    date: NaiveDate,
    participants: &[Participant],
    config: &PipelineConfig,
    go: &GoList,
    server: &mut Server,
    day_seed: u64,
) {
    let (sparse, olh) = config.mechanisms();
    let (mut tx, mut rx) = transport::loopback();
    // Clients see the go-list as decoded from the wire.
    tx.send(&Envelope::new(date, "server", Payload::GoList(go.clone())))
        .expect("loopback open");
    let go = match rx.recv().expect("valid go-list").expect("loopback open").payload {
        Payload::GoList(g) => g,
        other => panic!("expected GO_LIST, got {}", other.kind()),
    };
    let mut frames: Vec<Vec<u8>> = Vec::new();
    for p in participants {
        let sender = format!("u{}", p.user);
        let mut rng = report_rng(day_seed, p.user);
        let prefix = p.held.prefix();
        let mut reports = Vec::new();
        let Some((report, _)) = emit(&p.held, &config.params, &sparse, &olh, &go, &mut rng, |t, k, d| {
            reports.push(SparseReport::new(t, k, prefix, d))
        }) else {
            continue;
        };
        for r in reports {
            frames.push(transport::encode_envelope(&Envelope::new(date, sender.clone(), Payload::SparseReport(r))));
        }
        frames.push(transport::encode_envelope(&Envelope::new(date, sender, Payload::OlhReport(report))));
    }
    if config.wire == WireMode::Shuffled {
        frames.shuffle(&mut seed::rng(seed::derive(day_seed, seed::ASSIGN, 1)));
    }
    for frame in frames {
        match transport::decode_envelope(&frame).expect("own encoding decodes").payload {
            Payload::SparseReport(r) => server.ingest_sparse(&r).expect("valid report"),
            Payload::OlhReport(r) => server.ingest_olh(&r).expect("valid report"),
            other => panic!("unexpected {} from client", other.kind()),
        }
    }
}

/// Run the protocol for one day and classify the published heavy hitters
/// against the day's true counts.
pub fn run_day(
    date: NaiveDate,
    calls: &[PhoneNumber],
    config: &PipelineConfig,
    pop: &mut Population,
    day_seed: u64,
) -> DayOutcome {
    let (participants, dummies, abstained) = assign(date, calls, config, pop, day_seed);
    let (sparse, olh) = config.mechanisms();
    let mut server = Server::new(config.params.clone())
        .expect("validated params")
        .with_mechanisms(sparse, olh)
        .with_exec(config.exec);

    match config.wire {
        WireMode::Direct => {
            let mut counts: BTreeMap<AreaCode, u64> = BTreeMap::new();
            for p in &participants {
                *counts.entry(p.held.prefix()).or_insert(0) += 1;
            }
            for (prefix, n) in counts {
                server.announce_count(prefix, n);
            }
        }
        WireMode::Loopback | WireMode::Shuffled => {
            for p in &participants {
                let e = Envelope::new(date, format!("u{}", p.user), Payload::PrefixAnnounce(PrefixAnnounce { prefix: p.held.prefix() }));
                match transport::decode_envelope(&transport::encode_envelope(&e)).expect("roundtrip").payload {
                    Payload::PrefixAnnounce(a) => server.announce(a.prefix),
                    _ => unreachable!("announce roundtrip"),
                }
            }
        }
    }
    let go = server.publish_go_list(&mut seed::rng(seed::derive(day_seed, seed::FAMILY, 0)));

    match config.wire {
        WireMode::Direct => collect_direct(&participants, config, &go, &mut server, day_seed),
        WireMode::Loopback | WireMode::Shuffled => collect_wire(date, &participants, config, &go, &mut server, day_seed),
    }

    let reporting: Vec<&Participant> = participants.iter().filter(|p| go.admits(p.held.prefix())).collect();
    let spent = reporting.len() as f64 * config.params.total_epsilon();
    for p in &reporting {
        if p.real {
            if let Some(state) = pop.clients.get_mut(p.user) {
                state.record(p.held, date);
            }
        }
    }

    let result = server.finish();
    let mut heavy_hitters = result.heavy_hitters;
    if config.wire != WireMode::Direct {
        let e = Envelope::new(date, "server", Payload::HhPublish(HhPublish { heavy_hitters }));
        heavy_hitters = match transport::decode_envelope(&transport::encode_envelope(&e)).expect("roundtrip").payload {
            Payload::HhPublish(h) => h.heavy_hitters,
            _ => unreachable!("publish roundtrip"),
        };
    }
    let truth = count_calls(calls);
    let estimates: BTreeMap<PhoneNumber, f64> = heavy_hitters.iter().map(|h| (h.caller_id, h.estimate)).collect();
    let tally = classify(&truth, &estimates, config.params.tau);
    DayOutcome {
        date,
        complaints: calls.len(),
        participants: participants.len(),
        dummies,
        abstained,
        admitted: go.buckets.clone(),
        heavy_hitters,
        tally,
        true_heavy: truth.values().filter(|&&c| c > u64::from(config.params.tau)).count(),
        stats: result.stats,
        eta: result.eta,
        spent,
    }
}

/// One day of one run with its blocking rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDay {
    pub run: u32,
    pub outcome: DayOutcome,
    /// Share of the day's calls blocked by the list built from earlier days.
    pub cbr: f64,
    /// The same for the list built from true counts.
    pub cbr_baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub repeats: u32,
    pub seed: u64,
}

/// Simulate one run over consecutive days.
pub fn run_month(days: &BTreeMap<NaiveDate, Vec<PhoneNumber>>, config: &PipelineConfig, run: u32, master: u64) -> Vec<RunDay> {
    let run_seed = seed::derive(master, seed::RUN, u64::from(run));
    let mut pop = Population::new(config);
    let mut blacklist = Blacklist::new(config.window);
    let mut baseline = Blacklist::new(config.window);
    let mut out = Vec::with_capacity(days.len());
    for (i, (date, calls)) in days.iter().enumerate() {
        let day_seed = seed::derive(run_seed, seed::DAY, i as u64);
        let cbr_now = cbr(&blacklist, calls);
        let cbr_base = cbr(&baseline, calls);
        let outcome = run_day(*date, calls, config, &mut pop, day_seed);
        blacklist.update(outcome.published(), *date).expect("days ascend");
        let truth = count_calls(calls);
        baseline
            .update(true_heavy_hitters(&truth, config.params.tau).iter(), *date)
            .expect("days ascend");
        log::debug!(
            "run {run} {date}: thh {} fhh {} uhh {} cbr {:.4} cbr* {:.4}",
            outcome.tally.thh,
            outcome.tally.fhh,
            outcome.tally.uhh,
            cbr_now,
            cbr_base
        );
        out.push(RunDay {
            run,
            outcome,
            cbr: cbr_now,
            cbr_baseline: cbr_base,
        });
    }
    out
}

/// All runs of an experiment, in run order.
pub fn run_experiment(days: &BTreeMap<NaiveDate, Vec<PhoneNumber>>, config: &ExperimentConfig) -> Experiment {
    let runs: Vec<u32> = (0..config.repeats).collect();
    let per_run = par::map(config.pipeline.exec, &runs, |&r| run_month(days, &config.pipeline, r, config.seed));
    Experiment {
        params: config.pipeline.params.clone(),
        days: per_run.into_iter().flatten().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub params: ProtocolParams,
    pub days: Vec<RunDay>,
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub date: String,
    pub run: String,
    pub eps_hh: f64,
    pub eps_olh: f64,
    pub rounds: u16,
    pub tau: u32,
    pub randomizer: String,
    pub thh: f64,
    pub fhh: f64,
    pub uhh: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cbr: f64,
    pub cbr_ratio: f64,
}

pub const METRICS_HEADER: [&str; 15] = [
    "date", "run", "eps_hh", "eps_olh", "T", "tau", "randomizer", "thh", "fhh", "uhh", "precision", "recall", "f1",
    "cbr", "cbr_ratio",
];

fn mean(xs: &[f64]) -> f64 {
    let xs: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let xs: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(&xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut xs: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

/// Headline numbers of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean_thh: f64,
    pub mean_fhh: f64,
    pub mean_uhh: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub mean_cbr: f64,
    pub mean_cbr_baseline: f64,
    pub median_cbr: f64,
    pub median_cbr_baseline: f64,
    /// `median(CBR) / median(CBR*)` over all run-days.
    pub cbr_ratio: f64,
}

impl Experiment {
    fn column(&self, f: impl Fn(&RunDay) -> f64) -> Vec<f64> {
        self.days.iter().map(f).collect()
    }

    fn prf(d: &RunDay) -> (f64, f64, f64) {
        f1(d.outcome.tally)
    }

    pub fn summary(&self) -> Summary {
        let median_cbr = median(&self.column(|d| d.cbr));
        let median_cbr_baseline = median(&self.column(|d| d.cbr_baseline));
        Summary {
            mean_thh: mean(&self.column(|d| d.outcome.tally.thh as f64)),
            mean_fhh: mean(&self.column(|d| d.outcome.tally.fhh as f64)),
            mean_uhh: mean(&self.column(|d| d.outcome.tally.uhh as f64)),
            mean_precision: mean(&self.column(|d| Self::prf(d).0)),
            mean_recall: mean(&self.column(|d| Self::prf(d).1)),
            mean_f1: mean(&self.column(|d| Self::prf(d).2)),
            mean_cbr: mean(&self.column(|d| d.cbr)),
            mean_cbr_baseline: mean(&self.column(|d| d.cbr_baseline)),
            median_cbr,
            median_cbr_baseline,
            cbr_ratio: ratio(median_cbr, median_cbr_baseline),
        }
    }

    fn row(&self, date: String, run: String, vals: [f64; 8]) -> MetricsRow {
        MetricsRow {
            date,
            run,
            eps_hh: self.params.eps_hh,
            eps_olh: self.params.eps_olh,
            rounds: self.params.rounds,
            tau: self.params.tau,
            randomizer: self.params.randomizer.to_string(),
            thh: vals[0],
            fhh: vals[1],
            uhh: vals[2],
            precision: vals[3],
            recall: vals[4],
            f1: vals[5],
            cbr: vals[6],
            cbr_ratio: vals[7],
        }
    }

    /// Per-run rows, then `mean`, `std`, `median` and `baseline` summary rows.
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows: Vec<MetricsRow> = self
            .days
            .iter()
            .map(|d| {
                let t = d.outcome.tally;
                let (p, r, f) = f1(t);
                self.row(
                    d.outcome.date.format("%Y-%m-%d").to_string(),
                    d.run.to_string(),
                    [t.thh as f64, t.fhh as f64, t.uhh as f64, p, r, f, d.cbr, ratio(d.cbr, d.cbr_baseline)],
                )
            })
            .collect();
        let cols: [Vec<f64>; 7] = [
            self.column(|d| d.outcome.tally.thh as f64),
            self.column(|d| d.outcome.tally.fhh as f64),
            self.column(|d| d.outcome.tally.uhh as f64),
            self.column(|d| Self::prf(d).0),
            self.column(|d| Self::prf(d).1),
            self.column(|d| Self::prf(d).2),
            self.column(|d| d.cbr),
        ];
        let base = self.column(|d| d.cbr_baseline);
        let s = self.summary();
        let all = || "all".to_string();
        let pick = |f: fn(&[f64]) -> f64| -> [f64; 7] { std::array::from_fn(|i| f(&cols[i])) };
        let m = pick(mean);
        rows.push(self.row(all(), "mean".into(), [m[0], m[1], m[2], m[3], m[4], m[5], m[6], ratio(s.mean_cbr, s.mean_cbr_baseline)]));
        let sd = pick(std_dev);
        let ratios: Vec<f64> = self.days.iter().map(|d| ratio(d.cbr, d.cbr_baseline)).collect();
        rows.push(self.row(all(), "std".into(), [sd[0], sd[1], sd[2], sd[3], sd[4], sd[5], sd[6], std_dev(&ratios)]));
        let md = pick(median);
        rows.push(self.row(all(), "median".into(), [md[0], md[1], md[2], md[3], md[4], md[5], md[6], s.cbr_ratio]));
        let heavy = mean(&self.column(|d| d.outcome.true_heavy as f64));
        rows.push(self.row(all(), "baseline".into(), [heavy, 0.0, 0.0, 1.0, 1.0, 1.0, median(&base), 1.0]));
        rows
    }
}

fn num(x: f64) -> String {
    if !x.is_finite() {
        String::new()
    } else if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.6}")
    }
}

/// Write rows in the fixed column order. Undefined ratios are left empty.
pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.date.clone(),
            r.run.clone(),
            num(r.eps_hh),
            num(r.eps_olh),
            r.rounds.to_string(),
            r.tau.to_string(),
            r.randomizer.clone(),
            num(r.thh),
            num(r.fhh),
            num(r.uhh),
            num(r.precision),
            num(r.recall),
            num(r.f1),
            num(r.cbr),
            num(r.cbr_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Callers published on at least one day of a run.
pub fn published_callers(days: &[RunDay]) -> BTreeSet<PhoneNumber> {
    days.iter().flat_map(|d| d.outcome.published().copied()).collect()
}
