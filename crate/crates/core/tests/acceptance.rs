//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a criterion outside `EXPECTED_FAIL` fails.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use ldp_blacklist::bucket_gate::{fill_probability, matching_model, min_reports_for, tau_deviation};
use ldp_blacklist::channels::HashFamily;
use ldp_blacklist::codec::{decode_codeword, encode_suffix, AreaCode, PhoneNumber, SUFFIX_LIMIT};
use ldp_blacklist::par::{self, Exec};
use ldp_blacklist::randomizer::{
    basic_keep_probability, ldp_ratio_bounds, variance_basic, variance_crossover, variance_extended, Branch, Draw,
    Input, OlhReport, SparseReport, ThreeAtom,
};
use ldp_blacklist::seed;
use ldp_blacklist::server::{eta_threshold, BucketPlan, GoList, HeavyHitter};
use ldp_blacklist::simharness::{
    calls_by_day, generate_synthetic, run_day, run_experiment, write_metrics, ExperimentConfig, PipelineConfig,
    Population, Summary, SynthSpec, WireMode,
};
use ldp_blacklist::transport::{decode_envelope, encode_envelope, Envelope, HhPublish, Payload, PrefixAnnounce};
use ldp_blacklist::{ProtocolParams, RandomizerKind};

/// Criterion 7 brackets `ln √12`, but the exact crossover is `ln √3`.
const EXPECTED_FAIL: &[u8] = &[7];

const MASTER: u64 = 20_160_217;

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

fn rng(tag: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive(MASTER, tag, index))
}

fn eta_reproduction() -> Verdict {
    let eta = eta_threshold(2, 15.0, 1e7, 0.751, 1000.0);
    let rounded = (eta * 1000.0).round();
    let pass = (0.0225..=0.0235).contains(&eta) && rounded == 23.0;
    verdict(1, pass, format!("eta = {eta:.5}, eta*n = {rounded}"))
}

fn budget_table() -> Verdict {
    let expected = [(12.0, 0.95), (8.8, 0.90), (7.0, 0.85), (5.6, 0.80), (4.4, 0.75)];
    let mut worst = 0.0f64;
    let mut shown = Vec::new();
    for (eps, want) in expected {
        let keep = basic_keep_probability(eps / 4.0);
        worst = worst.max((keep - want).abs());
        shown.push(format!("{keep:.3}"));
    }
    verdict(2, worst <= 0.005, format!("keep = [{}], max deviation {worst:.4}", shown.join(", ")))
}

fn balls_in_bins() -> Verdict {
    let t = Instant::now();
    let n24 = min_reports_for(24, 0.80);
    let p84 = fill_probability(24, 84);
    let n34 = min_reports_for(34, 0.80);
    let model = matching_model(2);
    let secs = t.elapsed().as_secs_f64();
    let pass = n24 == 111 && p84 < 0.5 && (169..=171).contains(&n34) && model.is_some() && secs < 1.0;
    let model = model.map_or("none".to_string(), |m| format!("{} (max deviation {})", m.name(), tau_deviation(m)));
    verdict(
        3,
        pass,
        format!("n(24, .8) = {n24}, P(24, 84) = {p84:.4}, n(34, .8) = {n34}, model {model}, {secs:.2}s"),
    )
}

fn codec_correction() -> Verdict {
    let mut r = rng(4, 0);
    let mut failures = 0u32;
    let mut trials = 0u32;
    for _ in 0..1000 {
        let suffix = r.gen_range(0..SUFFIX_LIMIT);
        let word = encode_suffix(suffix).expect("suffix in range");
        for j in 0..32 {
            trials += 1;
            if decode_codeword(word.flip(j)) != Ok(suffix) {
                failures += 1;
            }
        }
    }
    verdict(4, failures == 0, format!("{failures} failures in {trials} single-bit flips"))
}

/// Largest and smallest `P[z | a] / P[z | b]` over the three inputs and the
/// three output atoms of one coordinate.
fn enumerate_ratios(prm: &ThreeAtom) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for a in [1i8, -1, 0] {
        for b in [1i8, -1, 0] {
            let (pa, pb) = (prm.atom_probabilities(a), prm.atom_probabilities(b));
            for k in 0..3 {
                if pa[k] == 0.0 && pb[k] == 0.0 {
                    continue;
                }
                lo = lo.min(pa[k] / pb[k]);
                hi = hi.max(pa[k] / pb[k]);
            }
        }
    }
    (lo, hi)
}

fn ldp_bound() -> Verdict {
    let mut pass = true;
    let mut worst = 0.0f64;
    for eps in [1.1, 2.2, 3.0] {
        for prm in [ThreeAtom::basic(eps).unwrap(), ThreeAtom::extended(eps).unwrap()] {
            let (lo, hi) = enumerate_ratios(&prm);
            let e = f64::exp(eps);
            pass &= lo >= 1.0 / e - 1e-12 && hi <= e + 1e-9 && (hi - e).abs() <= 1e-9;
            pass &= ldp_ratio_bounds(&prm) == (lo, hi);
            worst = worst.max((hi - e).abs());
        }
    }
    verdict(5, pass, format!("max |max ratio - e^eps| = {worst:.2e}"))
}

/// `repeats` estimates of the target's frequency from `n` reports, `round(f·n)`
/// of which hold the target codeword and the rest the zero input.
fn frequency_estimates(prm: &ThreeAtom, f: f64, n: usize, repeats: u64, stream: u64) -> Vec<f64> {
    let target = encode_suffix(4_242_424).unwrap();
    let holders = (f * n as f64).round() as usize;
    let trials: Vec<u64> = (0..repeats).collect();
    par::map(Exec::Parallel, &trials, |&t| {
        let mut r = rng(stream, t);
        let mut sum = 0.0;
        for u in 0..n {
            let input = if u < holders { Input::Word(target) } else { Input::Zero };
            let d = prm.sample(input, &mut r);
            sum += d.value(prm.c) * target.entry(usize::from(d.index));
        }
        sum / n as f64
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, v)
}

fn estimator_calibration() -> Verdict {
    const N: usize = 10_000;
    const REPEATS: u64 = 2_000;
    let t = Instant::now();
    let mut pass = true;
    let mut worst_z = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut stream = 600;
    for kind in [RandomizerKind::Basic, RandomizerKind::Extended] {
        for eps in [1.1, 2.2, 3.0] {
            let prm = ThreeAtom::for_kind(kind, eps).unwrap();
            for f in [0.0, 0.015, 0.1] {
                stream += 1;
                let est = frequency_estimates(&prm, f, N, REPEATS, stream);
                let (m, v) = mean_var(&est);
                let theory = match kind {
                    RandomizerKind::Basic => variance_basic(f, N as u64, eps),
                    RandomizerKind::Extended => variance_extended(f, N as u64, eps),
                };
                let z = (m - f).abs() / (v / REPEATS as f64).sqrt();
                let rel = (v / theory - 1.0).abs();
                pass &= z <= 3.0 && rel <= 0.10;
                worst_z = worst_z.max(z);
                worst_var = worst_var.max(rel);
            }
        }
    }
    verdict(
        6,
        pass,
        format!(
            "18 configs x {REPEATS} repeats of n = {N}: max |bias| = {worst_z:.2} SE, max variance error {:.1}%, {:.1}s",
            100.0 * worst_var,
            t.elapsed().as_secs_f64()
        ),
    )
}

/// Per-report variance of the zero-frequency estimate from `draws` samples.
fn zero_input_variance(prm: &ThreeAtom, draws: u64, stream: u64) -> f64 {
    let target = encode_suffix(4_242_424).unwrap();
    let mut r = rng(stream, 0);
    let xs: Vec<f64> = (0..draws)
        .map(|_| {
            let d = prm.sample(Input::Zero, &mut r);
            d.value(prm.c) * target.entry(usize::from(d.index))
        })
        .collect();
    mean_var(&xs).1
}

fn variance_crossover_bracket() -> Verdict {
    const DRAWS: u64 = 200_000;
    let grid: Vec<f64> = (30..=160).map(|i| f64::from(i) / 100.0).collect();
    let signs = par::map(Exec::Parallel, &grid, |&eps| {
        let stream = 700 + (eps * 100.0).round() as u64;
        let basic = zero_input_variance(&ThreeAtom::basic(eps).unwrap(), DRAWS, stream);
        let extended = zero_input_variance(&ThreeAtom::extended(eps).unwrap(), DRAWS, stream + 1000);
        (basic - extended).signum()
    });
    let flips: Vec<f64> = grid
        .windows(2)
        .zip(signs.windows(2))
        .filter(|(_, s)| s[0] != s[1])
        .map(|(e, _)| (e[0] + e[1]) / 2.0)
        .collect();
    let pass = flips.iter().any(|e| (1.20..=1.29).contains(e));
    let shown: Vec<String> = flips.iter().map(|e| format!("{e:.3}")).collect();
    verdict(
        7,
        pass,
        format!(
            "empirical sign flips at eps = [{}]; exact crossover ln(sqrt 3) = {:.4}; bracket [1.20, 1.29] around ln(sqrt 12) = {:.4} sees no flip",
            shown.join(", "),
            variance_crossover(0.0),
            12f64.sqrt().ln()
        ),
    )
}

struct MonthRun {
    eps: f64,
    tau: u32,
    summary: Summary,
    heavy: f64,
}

fn full_scale_runs() -> (Vec<MonthRun>, f64) {
    let t = Instant::now();
    let month = calls_by_day(&generate_synthetic(&SynthSpec::default(), 2016).expect("valid spec"));
    let configs = [
        (12.0, 143),
        (8.8, 143),
        (7.0, 143),
        (4.4, 143),
        (8.8, 151),
        (8.8, 161),
        (8.8, 174),
        (8.8, 195),
    ];
    let runs = configs
        .iter()
        .map(|&(eps, tau)| {
            let config = ExperimentConfig {
                pipeline: PipelineConfig {
                    params: ProtocolParams {
                        tau,
                        ..ProtocolParams::with_budgets(eps, 3.0)
                    },
                    ..Default::default()
                },
                repeats: 10,
                seed: 7,
            };
            let exp = run_experiment(&month, &config);
            let detected = exp.days.iter().map(|d| (d.outcome.tally.thh + d.outcome.tally.uhh) as f64);
            let heavy = detected.sum::<f64>() / exp.days.len() as f64;
            MonthRun {
                eps,
                tau,
                summary: exp.summary(),
                heavy,
            }
        })
        .collect();
    (runs, t.elapsed().as_secs_f64())
}

fn end_to_end(runs: &[MonthRun], secs: f64) -> Verdict {
    let at = |eps: f64, tau: u32| runs.iter().find(|r| r.eps == eps && r.tau == tau).expect("configured");
    let f1: Vec<f64> = [12.0, 8.8, 7.0].iter().map(|&e| at(e, 143).summary.mean_f1).collect();
    let max_fhh = runs.iter().map(|r| r.summary.mean_fhh).fold(0.0, f64::max);
    let heavy: Vec<f64> = [143, 151, 161, 174, 195].iter().map(|&t| at(8.8, t).heavy).collect();
    let a = f1.iter().all(|&f| f >= 0.85);
    let b = max_fhh < 8.0;
    let c = heavy.windows(2).all(|w| w[1] <= w[0]);
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    verdict(
        8,
        a && b && c,
        format!(
            "(a) F1 at eps 12/8.8/7 = [{}]; (b) max mean FHH/day = {max_fhh:.2}; (c) THH+UHH over tau 143..195 = [{}]; {secs:.0}s",
            fmt(&f1),
            fmt(&heavy)
        ),
    )
}

fn blacklist_utility(runs: &[MonthRun]) -> Verdict {
    let ratio = |eps: f64| {
        runs.iter()
            .find(|r| r.eps == eps && r.tau == 143)
            .expect("configured")
            .summary
            .cbr_ratio
    };
    let seq: Vec<f64> = [4.4, 7.0, 8.8, 12.0].iter().map(|&e| ratio(e)).collect();
    let monotone = seq.windows(2).all(|w| w[0] <= w[1]);
    let pass = ratio(12.0) >= ratio(7.0) && ratio(7.0) >= ratio(4.4) && ratio(4.4) <= 0.1 && monotone;
    let shown: Vec<String> = seq.iter().map(|x| format!("{x:.3}")).collect();
    verdict(9, pass, format!("CBR/CBR* at eps 4.4/7/8.8/12 = [{}]", shown.join(", ")))
}

fn random_envelope<R: Rng>(r: &mut R) -> Envelope {
    let prefix = AreaCode::new(r.gen_range(0..1000)).unwrap();
    let number = |r: &mut R| PhoneNumber::new(AreaCode::new(r.gen_range(200..1000)).unwrap(), r.gen_range(0..SUFFIX_LIMIT)).unwrap();
    let payload = match r.gen_range(0..5) {
        0 => Payload::PrefixAnnounce(PrefixAnnounce { prefix }),
        1 => {
            let rounds = r.gen_range(1..4);
            let buckets = (0..r.gen_range(0..5))
                .map(|i| BucketPlan {
                    prefix: AreaCode::new(200 + i * 100 + r.gen_range(0..100)).unwrap(),
                    contributors: r.gen_range(1..100_000),
                    channels: r.gen_range(1..64),
                })
                .collect();
            Payload::GoList(GoList {
                tau: r.gen_range(1..500),
                family: HashFamily::random(rounds, r.gen_range(1..64), r),
                buckets,
            })
        }
        2 => {
            let branch = if r.gen_bool(0.5) { Branch::Enc } else { Branch::Zero };
            let sign = match branch {
                Branch::Enc => [-1i8, 0, 1][r.gen_range(0..3)],
                Branch::Zero => [-1i8, 1][r.gen_range(0..2)],
            };
            let draw = Draw {
                index: r.gen_range(0..32),
                sign,
                branch,
            };
            Payload::SparseReport(SparseReport::new(r.gen_range(1..4), r.gen_range(1..64), prefix, draw))
        }
        3 => {
            let g = r.gen_range(2..64);
            Payload::OlhReport(OlhReport {
                prefix,
                seed: r.gen(),
                g,
                value: r.gen_range(0..g),
            })
        }
        _ => Payload::HhPublish(HhPublish {
            heavy_hitters: (0..r.gen_range(0..6))
                .map(|_| HeavyHitter {
                    caller_id: number(r),
                    estimate: r.gen_range(0.0..5000.0),
                })
                .collect(),
        }),
    };
    let day = NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + chrono::Days::new(r.gen_range(0..5000));
    Envelope::new(day, format!("u{}", r.gen::<u32>()), payload)
}

fn metrics_csv(month: &BTreeMap<NaiveDate, Vec<PhoneNumber>>, exec: Exec) -> Vec<u8> {
    let config = ExperimentConfig {
        pipeline: PipelineConfig {
            n_users: 6000,
            exec,
            ..Default::default()
        },
        repeats: 2,
        seed: 11,
    };
    let mut out = Vec::new();
    write_metrics(&mut out, &run_experiment(month, &config).rows()).unwrap();
    out
}

fn determinism_and_transport() -> Verdict {
    let t = Instant::now();
    let spec = SynthSpec {
        days: 3,
        mean_daily: 3000,
        hubs: 2,
        planted: vec!["202:400:3".parse().unwrap()],
        ..Default::default()
    };
    let month = calls_by_day(&generate_synthetic(&spec, 5).unwrap());
    let a = metrics_csv(&month, Exec::Parallel);
    let b = metrics_csv(&month, Exec::Parallel);
    let c = metrics_csv(&month, Exec::Sequential);
    let identical = a == b && a == c;

    let mut r = rng(10, 0);
    let mut roundtrip_failures = 0;
    for _ in 0..10_000 {
        let e = random_envelope(&mut r);
        let bytes = encode_envelope(&e);
        match decode_envelope(&bytes) {
            Ok(back) if back == e && encode_envelope(&back) == bytes => {}
            _ => roundtrip_failures += 1,
        }
    }

    let (date, calls) = month.iter().next().unwrap();
    let mut worst = 0.0f64;
    let mut same_set = true;
    let base = PipelineConfig {
        n_users: 6000,
        ..Default::default()
    };
    let direct = run_day(*date, calls, &base, &mut Population::new(&base), 99);
    let mut shuffled_calls = calls.clone();
    shuffled_calls.shuffle(&mut rng(10, 1));
    for (wire, calls) in [(WireMode::Shuffled, calls), (WireMode::Loopback, calls), (WireMode::Direct, &shuffled_calls)] {
        let config = PipelineConfig { wire, ..base.clone() };
        let other = run_day(*date, calls, &config, &mut Population::new(&config), 99);
        let ids = |o: &ldp_blacklist::simharness::DayOutcome| o.heavy_hitters.iter().map(|h| h.caller_id).collect::<Vec<_>>();
        if wire != WireMode::Direct {
            same_set &= ids(&direct) == ids(&other);
            for (x, y) in direct.heavy_hitters.iter().zip(&other.heavy_hitters) {
                worst = worst.max((x.estimate - y.estimate).abs());
            }
        }
        same_set &= !other.heavy_hitters.is_empty();
    }
    let pass = identical && roundtrip_failures == 0 && same_set && worst <= 1e-9;
    verdict(
        10,
        pass,
        format!(
            "metrics CSV identical across runs and modes: {identical}; {roundtrip_failures} roundtrip failures in 10000 envelopes; shuffled delivery max estimate difference {worst:.1e}; {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut verdicts = vec![
        eta_reproduction(),
        budget_table(),
        balls_in_bins(),
        codec_correction(),
        ldp_bound(),
        estimator_calibration(),
        variance_crossover_bracket(),
    ];
    let (runs, secs) = full_scale_runs();
    verdicts.push(end_to_end(&runs, secs));
    verdicts.push(blacklist_utility(&runs));
    verdicts.push(determinism_and_transport());

    for v in &verdicts {
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && EXPECTED_FAIL.contains(&v.id) { " (expected)" } else { "" };
        println!("criterion {:>2}: {status}{note} {}", v.id, v.detail);
    }
    let unexpected: Vec<u8> = verdicts
        .iter()
        .filter(|v| !v.pass && !EXPECTED_FAIL.contains(&v.id))
        .map(|v| v.id)
        .collect();
    println!("acceptance finished in {:.0}s", started.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
