use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::Args;
use serde_json::{json, Value};

use ldp_blacklist::blacklist::{Blacklist, ExportMeta};
use ldp_blacklist::bucket_gate::{matching_model, tau_table, TauModel, PUBLISHED_TAUS, TAU_TARGETS};
use ldp_blacklist::client::DummyPolicy;
use ldp_blacklist::par::Exec;
use ldp_blacklist::randomizer::{basic_keep_probability, ThreeAtom};
use ldp_blacklist::server::eta_threshold;
use ldp_blacklist::simharness::dataset::export_csv;
use ldp_blacklist::simharness::sim::DEFAULT_USERS;
use ldp_blacklist::simharness::{
    calls_by_day, generate_synthetic, ingest_csv, run_experiment, run_month, write_metrics, Campaign, DatasetError,
    ExperimentConfig, PipelineConfig, SynthSpec, WireMode,
};
use ldp_blacklist::{PhoneNumber, ProtocolParams, RandomizerKind};

use crate::config::{CliError, Resolver};

#[derive(Args, Debug, Default)]
pub struct ProtocolArgs {
    /// Heavy-hitter budget ε_HH per day.
    #[arg(long)]
    pub eps_hh: Option<f64>,
    /// Frequency-oracle budget ε_OLH per day.
    #[arg(long)]
    pub eps_olh: Option<f64>,
    /// Rounds T.
    #[arg(long, visible_alias = "T")]
    pub rounds: Option<u16>,
    /// Admission and publication threshold τ.
    #[arg(long)]
    pub tau: Option<u32>,
    /// Failure probability β of the η threshold.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Channels K per bucket; sized from each bucket's contributors when absent.
    #[arg(long)]
    pub channels: Option<u32>,
    /// OLH hash range g.
    #[arg(long)]
    pub olh_range: Option<u32>,
    /// Domain size d of the η threshold.
    #[arg(long)]
    pub domain_size: Option<u64>,
    /// basic or extended.
    #[arg(long)]
    pub randomizer: Option<RandomizerKind>,
}

#[derive(Args, Debug, Default)]
pub struct PopulationArgs {
    /// Users per day.
    #[arg(long)]
    pub users: Option<usize>,
    /// What users without an unknown call do: send_dummy or abstain.
    #[arg(long)]
    pub dummy: Option<DummyPolicy>,
    /// Skip numbers a user reported in the last 30 days.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dedup: Option<bool>,
    /// Blacklist window in days.
    #[arg(long)]
    pub window: Option<u32>,
    /// direct, loopback or shuffled.
    #[arg(long)]
    pub wire: Option<WireMode>,
    /// parallel or sequential.
    #[arg(long)]
    pub exec: Option<Exec>,
    /// Replace the randomizers with their noiseless references.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub noiseless: Option<bool>,
    /// Master seed of the simulation.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    /// Seed of the synthetic month.
    #[arg(long)]
    pub synth_seed: Option<u64>,
    #[arg(long)]
    pub days: Option<u32>,
    /// First day, YYYY-MM-DD.
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Mean daily background complaints.
    #[arg(long)]
    pub mean_daily: Option<u32>,
    #[arg(long)]
    pub weekly_amplitude: Option<f64>,
    /// Power-law exponent of background daily counts.
    #[arg(long)]
    pub tail_exponent: Option<f64>,
    /// Busy area codes carrying campaigns.
    #[arg(long)]
    pub hubs: Option<u32>,
    /// Concurrent campaigns outside the hubs.
    #[arg(long)]
    pub quiet_campaigns: Option<u32>,
    /// Extra campaign prefix:count:days[:start]; repeatable.
    #[arg(long)]
    pub plant: Vec<Campaign>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Complaint CSV with header date,caller_id[,victim_prefix][,label].
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Simulate on a synthetic month instead of an input file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synth: Option<bool>,
    #[command(flatten)]
    pub spec: SynthArgs,
}

#[derive(Args, Debug, Default)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Metadata JSON; defaults to `<output>.meta.json` when writing to a file.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub population: PopulationArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Independent runs over the month.
    #[arg(long)]
    pub repeats: Option<u32>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Default)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub spec: SynthArgs,
    /// Alias of --synth-seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Default)]
pub struct BlacklistEvalArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub population: PopulationArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Run index; selects the run seed.
    #[arg(long)]
    pub run: Option<u32>,
    /// Write the final blacklist here.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug, Default)]
pub struct TablesArgs {
    /// Rounds T of the per-report budget table.
    #[arg(long, visible_alias = "T", default_value_t = 2)]
    pub rounds: u16,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn protocol(r: &mut Resolver, a: ProtocolArgs) -> Result<ProtocolParams, CliError> {
    let d = ProtocolParams::default();
    let channels = r.get("channels", a.channels)?;
    if channels.is_none() {
        r.note("channels", "auto");
    }
    let params = ProtocolParams {
        eps_hh: r.get_or("eps-hh", a.eps_hh, d.eps_hh)?,
        eps_olh: r.get_or("eps-olh", a.eps_olh, d.eps_olh)?,
        rounds: r.get_or("rounds", a.rounds, d.rounds)?,
        tau: r.get_or("tau", a.tau, d.tau)?,
        beta: r.get_or("beta", a.beta, d.beta)?,
        channels,
        olh_range: r.get_or("olh-range", a.olh_range, d.olh_range)?,
        domain_size: r.get_or("domain-size", a.domain_size, d.domain_size)?,
        randomizer: r.get_or("randomizer", a.randomizer, d.randomizer)?,
        ..d
    };
    params.validate().map_err(config_err)?;
    Ok(params)
}

fn pipeline(r: &mut Resolver, p: ProtocolArgs, a: PopulationArgs) -> Result<(PipelineConfig, u64), CliError> {
    let d = PipelineConfig::default();
    let config = PipelineConfig {
        params: protocol(r, p)?,
        n_users: r.get_or("users", a.users, DEFAULT_USERS)?,
        dummy: r.get_or("dummy", a.dummy, d.dummy)?,
        dedup: r.get_or("dedup", a.dedup, d.dedup)?,
        window: r.get_or("window", a.window, d.window)?,
        exec: r.get_or("exec", a.exec, d.exec)?,
        wire: r.get_or("wire", a.wire, d.wire)?,
        noiseless: r.get_or("noiseless", a.noiseless, d.noiseless)?,
    };
    if config.n_users == 0 {
        return Err(config_err("users must be >= 1"));
    }
    if config.window == 0 {
        return Err(config_err("window must be >= 1"));
    }
    let seed = r.get_or("seed", a.seed, 0u64)?;
    Ok((config, seed))
}

fn synth_spec(r: &mut Resolver, a: SynthArgs) -> Result<SynthSpec, CliError> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        days: r.get_or("days", a.days, d.days)?,
        start: r.get_or("start", a.start, d.start)?,
        mean_daily: r.get_or("mean-daily", a.mean_daily, d.mean_daily)?,
        weekly_amplitude: r.get_or("weekly-amplitude", a.weekly_amplitude, d.weekly_amplitude)?,
        tail_exponent: r.get_or("tail-exponent", a.tail_exponent, d.tail_exponent)?,
        hubs: r.get_or("hubs", a.hubs, d.hubs)?,
        quiet_campaigns: r.get_or("quiet-campaigns", a.quiet_campaigns, d.quiet_campaigns)?,
        planted: r.get_list("plant", a.plant)?,
        ..d
    };
    spec.validate().map_err(config_err)?;
    Ok(spec)
}

struct Month {
    days: BTreeMap<NaiveDate, Vec<PhoneNumber>>,
    source: Value,
}

fn load_month(r: &mut Resolver, a: DataArgs) -> Result<Month, CliError> {
    let synth_seed = a.spec.synth_seed;
    let input = r.get("input", a.input.map(|p| p.display().to_string()))?;
    let synth = r.get_or("synth", a.synth, false)?;
    match (input, synth) {
        (Some(_), true) => Err(config_err("pass either --input or --synth, not both")),
        (None, false) => Err(config_err("no complaints to simulate: pass --input FILE or --synth")),
        (Some(path), false) => {
            let path = PathBuf::from(path);
            let ingested = ingest_csv(&path).map_err(|e| match e {
                DatasetError::HeaderMismatch(_) => config_err(format!("{}: {e}", path.display())),
                other => io_err(&path, other),
            })?;
            if ingested.records.is_empty() {
                return Err(config_err(format!("{}: no valid complaint records", path.display())));
            }
            Ok(Month {
                days: calls_by_day(&ingested.records),
                source: json!({
                    "input": path.display().to_string(),
                    "records": ingested.records.len(),
                    "dropped": ingested.dropped,
                }),
            })
        }
        (None, true) => {
            let spec = synth_spec(r, a.spec)?;
            let seed = r.get_or("synth-seed", synth_seed, 0u64)?;
            let records = generate_synthetic(&spec, seed).map_err(config_err)?;
            Ok(Month {
                days: calls_by_day(&records),
                source: json!({ "synth": spec, "synth_seed": seed, "records": records.len() }),
            })
        }
    }
}

/// Open `path` for writing, or standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| io_err(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn outputs(r: &mut Resolver, a: OutputArgs) -> Result<(Option<PathBuf>, Option<PathBuf>), CliError> {
    let output = r.get("output", a.output.map(|p| p.display().to_string()))?.map(PathBuf::from);
    let meta = r.get("meta", a.meta.map(|p| p.display().to_string()))?.map(PathBuf::from);
    let meta = meta.or_else(|| {
        output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".meta.json");
            PathBuf::from(s)
        })
    });
    Ok((output, meta))
}

fn write_meta(path: Option<&Path>, command: &str, r: &Resolver, extra: Value) -> Result<(), CliError> {
    let Some(path) = path else {
        return Ok(());
    };
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": r.effective(),
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn simulate(r: &mut Resolver, a: SimulateArgs) -> Result<(), CliError> {
    let (pipeline, seed) = pipeline(r, a.protocol, a.population)?;
    let repeats = r.get_or("repeats", a.repeats, 10u32)?;
    if repeats == 0 {
        return Err(config_err("repeats must be >= 1"));
    }
    let month = load_month(r, a.data)?;
    let (output, meta) = outputs(r, a.out)?;
    log::info!("simulating {} days x {repeats} runs", month.days.len());
    let config = ExperimentConfig {
        pipeline,
        repeats,
        seed,
    };
    let experiment = run_experiment(&month.days, &config);
    let mut out = sink(output.as_deref())?;
    let shown = output.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    write_metrics(&mut out, &experiment.rows()).map_err(|e| io_err(&shown, e))?;
    out.flush().map_err(|e| io_err(&shown, e))?;
    let summary = experiment.summary();
    log::info!(
        "mean F1 {:.3}, mean FHH {:.2}, CBR/CBR* {:.3}",
        summary.mean_f1,
        summary.mean_fhh,
        summary.cbr_ratio
    );
    write_meta(meta.as_deref(), "simulate", r, json!({ "data": month.source, "summary": summary }))
}

pub fn gen_data(r: &mut Resolver, a: GenDataArgs) -> Result<(), CliError> {
    let seed = a.seed.or(a.spec.synth_seed);
    let spec = synth_spec(r, a.spec)?;
    let seed = r.get_or("synth-seed", seed, 0u64)?;
    let (output, meta) = outputs(r, a.out)?;
    let records = generate_synthetic(&spec, seed).map_err(config_err)?;
    match &output {
        Some(p) => export_csv(p, &records).map_err(|e| io_err(p, e))?,
        None => {
            let stdout = io::stdout().lock();
            ldp_blacklist::simharness::dataset::write_csv(stdout, &records)
                .map_err(|e| CliError::Io(format!("<stdout>: {e}")))?
        }
    }
    log::info!("wrote {} complaints over {} days", records.len(), spec.days);
    write_meta(meta.as_deref(), "gen-data", r, json!({ "synth": spec, "records": records.len() }))
}

pub fn blacklist_eval(r: &mut Resolver, a: BlacklistEvalArgs) -> Result<(), CliError> {
    let (pipeline, seed) = pipeline(r, a.protocol, a.population)?;
    let run = r.get_or("run", a.run, 0u32)?;
    let month = load_month(r, a.data)?;
    let export = r.get("export", a.export.map(|p| p.display().to_string()))?.map(PathBuf::from);
    let (output, meta) = outputs(r, a.out)?;

    let days = run_month(&month.days, &pipeline, run, seed);
    let mut blacklist = Blacklist::new(pipeline.window);
    let shown = output.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut out = sink(output.as_deref())?;
    let mut line = |s: String| writeln!(out, "{s}").map_err(|e| io_err(&shown, e));
    line("date,heavy_hitters,blacklist_size,cbr,cbr_baseline".into())?;
    for d in &days {
        blacklist.update(d.outcome.published(), d.outcome.date).map_err(config_err)?;
        line(format!(
            "{},{},{},{:.6},{:.6}",
            d.outcome.date,
            d.outcome.heavy_hitters.len(),
            blacklist.len(),
            d.cbr,
            d.cbr_baseline
        ))?;
    }
    drop(line);
    out.flush().map_err(|e| io_err(&shown, e))?;

    if let (Some(path), Some(last)) = (&export, days.last()) {
        let meta = ExportMeta {
            date: last.outcome.date,
            window: pipeline.window,
            tau: pipeline.params.tau,
            eps_hh: pipeline.params.eps_hh,
            eps_olh: pipeline.params.eps_olh,
            entries: blacklist.len(),
        };
        let mut w = sink(Some(path))?;
        blacklist.export(&mut w, &meta).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    write_meta(
        meta.as_deref(),
        "blacklist-eval",
        r,
        json!({ "data": month.source, "final_entries": blacklist.len() }),
    )
}

pub fn tables(a: TablesArgs) -> Result<(), CliError> {
    if a.rounds == 0 {
        return Err(config_err("rounds must be >= 1"));
    }
    let mut out = String::new();
    let mut push = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };

    push("# reports needed to fill every bin with the given probability".into());
    let header: Vec<String> = TAU_TARGETS.iter().map(|t| format!("{t:.2}")).collect();
    push(format!("{:<20} {:>4}  {}", "model", "l", header.join("  ")));
    let best = matching_model(2);
    for model in TauModel::ALL {
        let row: Vec<String> = tau_table(model, &TAU_TARGETS).iter().map(|n| format!("{n:>4}")).collect();
        let mark = if Some(model) == best { "  <- matches" } else { "" };
        push(format!("{:<20} {:>4}  {}{mark}", model.name(), model.bins(), row.join("  ")));
    }
    let published: Vec<String> = PUBLISHED_TAUS.iter().map(|n| format!("{n:>4}")).collect();
    push(format!("{:<20} {:>4}  {}", "published", "", published.join("  ")));
    push(String::new());

    push("# eta threshold".into());
    push(format!("{:>3} {:>6} {:>6} {:>10} {:>6} {:>8} {:>8}", "T", "eps", "beta", "d", "n", "eta", "eta*n"));
    for (t, eps, beta, d, n) in [
        (2u16, 15.0, 0.751, 1e7, 1000.0),
        (2, 8.8, 0.751, 1e7, 1000.0),
        (2, 8.8, 0.751, 1e7, 23_188.0),
    ] {
        let eta = eta_threshold(t, eps, d, beta, n);
        push(format!("{t:>3} {eps:>6} {beta:>6} {d:>10.0e} {n:>6} {eta:>8.3} {:>8.1}", eta * n));
    }
    push(String::new());

    push(format!("# per-report budget with T = {}", a.rounds));
    push(format!("{:>6} {:>8} {:>10} {:>10}", "eps_hh", "eps'", "basic keep", "extended p"));
    for eps in [12.0, 8.8, 7.0, 5.6, 4.4] {
        let per = eps / (2.0 * f64::from(a.rounds));
        let ext = ThreeAtom::extended(per).map_err(config_err)?;
        push(format!("{eps:>6} {per:>8.4} {:>10.3} {:>10.3}", basic_keep_probability(per), ext.p));
    }
    print!("{out}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn missing_data_source_is_config_error() {
        let mut r = Resolver::default();
        let err = load_month(&mut r, DataArgs::default()).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let mut r = Resolver::new(parse_config("eps-hh = -1\n", "x").unwrap());
        assert!(matches!(protocol(&mut r, ProtocolArgs::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn effective_config_lists_defaults() {
        let mut r = Resolver::default();
        pipeline(&mut r, ProtocolArgs::default(), PopulationArgs::default()).unwrap();
        let e = r.effective();
        assert_eq!(e["tau"], "143");
        assert_eq!(e["channels"], "auto");
        assert_eq!(e["users"], "23188");
        assert_eq!(e["randomizer"], "extended");
    }
}
