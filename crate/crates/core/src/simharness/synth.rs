//! Synthetic complaint month.
//!
//! Background complaints come from callers whose daily counts follow a
//! truncated discrete power law, so most callers are seen once. Complaint
//! volume follows a weekly cycle with a weekend dip. A few busy "hub" area
//! codes carry a large share of the background together with multi-day
//! robocall campaigns whose daily count scales with the hub's volume. Quieter
//! campaigns with counts around the threshold grid run in smaller area codes.
//! Extra campaigns can be planted with an exact count.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::{Datelike, Days, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::ComplaintRecord;
use crate::codec::{AreaCode, PhoneNumber, SUFFIX_LIMIT};
use crate::seed;

pub const CAMPAIGN_LABEL: &str = "campaign";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
}

/// A campaign with a fixed daily count on days `start..start + days`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Campaign {
    pub prefix: AreaCode,
    pub count: u32,
    pub days: u32,
    /// Offset of the first day from the spec start.
    #[serde(default)]
    pub start: u32,
}

impl std::str::FromStr for Campaign {
    type Err = String;

    /// `prefix:count:days[:start]`, e.g. `202:500:5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("campaign {s:?} is not prefix:count:days[:start]"));
        }
        let prefix = parts[0].parse().map_err(|e| format!("campaign {s:?}: {e}"))?;
        let num = |x: &str| x.parse::<u32>().map_err(|e| format!("campaign {s:?}: {e}"));
        Ok(Campaign {
            prefix,
            count: num(parts[1])?,
            days: num(parts[2])?,
            start: if parts.len() == 4 { num(parts[3])? } else { 0 },
        })
    }
}

impl std::fmt::Display for Campaign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}:{}", self.prefix, self.count, self.days, self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start: NaiveDate,
    pub days: u32,
    /// Mean daily background complaints.
    pub mean_daily: u32,
    /// Relative amplitude of the weekly cycle; peaks midweek, dips at weekends.
    pub weekly_amplitude: f64,
    /// Exponent `α` of `P(k) ∝ k^-α` for background callers' daily counts.
    pub tail_exponent: f64,
    /// Largest background daily count.
    pub max_background_count: u32,
    /// Zipf exponent of area-code popularity outside the hubs.
    pub prefix_exponent: f64,
    pub hubs: u32,
    /// Fraction of the background volume that falls in the hubs.
    pub hub_share: f64,
    /// Concurrent campaigns per hub.
    pub campaigns_per_hub: u32,
    /// Campaign daily count as a fraction of its hub's background volume.
    pub campaign_share: (f64, f64),
    /// Campaign duration range in days, inclusive.
    pub campaign_days: (u32, u32),
    /// Concurrent campaigns outside the hubs, each placed in the area code
    /// whose expected background volume is closest to `count / share`.
    pub quiet_campaigns: u32,
    /// Daily count range of quiet campaigns, inclusive.
    pub quiet_count: (u32, u32),
    /// Quiet campaign count as a fraction of its area code's background volume.
    pub quiet_share: (f64, f64),
    pub planted: Vec<Campaign>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            start: NaiveDate::from_ymd_opt(2016, 2, 17).expect("valid date"),
            days: 29,
            mean_daily: 13_000,
            weekly_amplitude: 0.25,
            tail_exponent: 3.0,
            max_background_count: 40,
            prefix_exponent: 1.0,
            hubs: 4,
            hub_share: 0.5,
            campaigns_per_hub: 1,
            campaign_share: (0.27, 0.33),
            campaign_days: (2, 5),
            quiet_campaigns: 1,
            quiet_count: (130, 210),
            quiet_share: (0.8, 1.2),
            planted: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.days == 0 {
            return bad("days must be >= 1");
        }
        if !(0.0..1.0).contains(&self.weekly_amplitude) {
            return bad("weekly_amplitude must lie in [0, 1)");
        }
        if !(self.tail_exponent > 1.0) {
            return bad("tail_exponent must exceed 1");
        }
        if self.max_background_count == 0 {
            return bad("max_background_count must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.hub_share) || (self.hubs == 0 && self.hub_share > 0.0) {
            return bad("hub_share must lie in [0, 1] and needs hubs > 0");
        }
        if self.hubs > 100 {
            return bad("at most 100 hubs");
        }
        let (lo, hi) = self.campaign_share;
        if !(0.0 <= lo && lo <= hi) {
            return bad("campaign_share must be an ordered nonnegative range");
        }
        let (dlo, dhi) = self.campaign_days;
        if dlo == 0 || dlo > dhi {
            return bad("campaign_days must be an ordered range starting at >= 1");
        }
        if self.quiet_count.0 > self.quiet_count.1 {
            return bad("quiet_count must be an ordered range");
        }
        let (lo, hi) = self.quiet_share;
        if !(0.0 < lo && lo <= hi) {
            return bad("quiet_share must be an ordered positive range");
        }
        for c in &self.planted {
            if c.days == 0 || c.start + c.days > self.days {
                return Err(SynthError::Invalid(format!("planted campaign {c} does not fit in {} days", self.days)));
            }
        }
        Ok(())
    }

    /// Weekly factor of day `date`: `1 + a·cos(2π(w - 2)/7)` with Monday `w = 0`.
    pub fn weekly_factor(&self, date: NaiveDate) -> f64 {
        let w = f64::from(date.weekday().num_days_from_monday());
        1.0 + self.weekly_amplitude * (2.0 * PI * (w - 2.0) / 7.0).cos()
    }

    pub fn date(&self, offset: u32) -> NaiveDate {
        self.start + Days::new(u64::from(offset))
    }
}

/// Truncated power law on `1..=max`.
fn count_law(alpha: f64, max: u32) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=max).map(|k| f64::from(k).powf(-alpha))).expect("positive weights")
}

fn random_number(prefix: AreaCode, rng: &mut ChaCha8Rng) -> PhoneNumber {
    PhoneNumber::new(prefix, rng.gen_range(0..SUFFIX_LIMIT)).expect("suffix in range")
}

struct Background<'a> {
    date: NaiveDate,
    rest: &'a [AreaCode],
    rest_law: &'a WeightedIndex<f64>,
    counts: &'a WeightedIndex<f64>,
}

/// Background callers in `prefix` (or in Zipf-drawn prefixes) until `budget`
/// complaints are used up.
fn emit_background(
    bg: &Background<'_>,
    prefix: Option<AreaCode>,
    budget: u64,
    reserved: &BTreeSet<PhoneNumber>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<ComplaintRecord>,
) {
    let mut left = budget;
    while left > 0 {
        let p = prefix.unwrap_or_else(|| bg.rest[bg.rest_law.sample(rng)]);
        let k = (bg.counts.sample(rng) as u64 + 1).min(left);
        let v = loop {
            let v = random_number(p, rng);
            if !reserved.contains(&v) {
                break v;
            }
        };
        for _ in 0..k {
            out.push(ComplaintRecord {
                date: bg.date,
                caller_id: v,
                victim_prefix: None,
                label: None,
            });
        }
        left -= k;
    }
}

struct ActiveCampaign {
    caller: PhoneNumber,
    share: f64,
    left: u32,
}

fn new_caller(prefix: AreaCode, reserved: &mut BTreeSet<PhoneNumber>, rng: &mut ChaCha8Rng) -> PhoneNumber {
    loop {
        let v = random_number(prefix, rng);
        if reserved.insert(v) {
            return v;
        }
    }
}

fn push_calls(out: &mut Vec<ComplaintRecord>, date: NaiveDate, caller: PhoneNumber, count: u64) {
    for _ in 0..count {
        out.push(ComplaintRecord {
            date,
            caller_id: caller,
            victim_prefix: None,
            label: Some(CAMPAIGN_LABEL.into()),
        });
    }
}

pub fn generate_synthetic(spec: &SynthSpec, master: u64) -> Result<Vec<ComplaintRecord>, SynthError> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(master, seed::SYNTH, 0));
    let mut prefixes: Vec<AreaCode> = (200..1000u16).map(|p| AreaCode::new(p).expect("valid prefix")).collect();
    prefixes.shuffle(&mut rng);
    let (hubs, rest) = prefixes.split_at(spec.hubs as usize);
    let weights: Vec<f64> = (1..=rest.len()).map(|r| (r as f64).powf(-spec.prefix_exponent)).collect();
    let rest_law = WeightedIndex::new(&weights).expect("positive weights");
    let total: f64 = weights.iter().sum();
    let rest_mean = f64::from(spec.mean_daily) * (1.0 - spec.hub_share);
    let expected: Vec<f64> = weights.iter().map(|w| rest_mean * w / total).collect();
    let counts = count_law(spec.tail_exponent, spec.max_background_count);

    let mut reserved: BTreeSet<PhoneNumber> = BTreeSet::new();
    let planted: Vec<PhoneNumber> = spec
        .planted
        .iter()
        .map(|c| new_caller(c.prefix, &mut reserved, &mut rng))
        .collect();

    let mut quiet: Vec<(usize, ActiveCampaign)> = Vec::new();
    let mut active: Vec<Vec<ActiveCampaign>> = hubs.iter().map(|_| Vec::new()).collect();
    let mut out = Vec::new();
    for day in 0..spec.days {
        let date = spec.date(day);
        let volume = (f64::from(spec.mean_daily) * spec.weekly_factor(date)).round() as u64;
        let hub_volume = if spec.hubs == 0 {
            0
        } else {
            (volume as f64 * spec.hub_share / f64::from(spec.hubs)).round() as u64
        };
        let rest_volume = volume - hub_volume * u64::from(spec.hubs);
        let bg = Background {
            date,
            rest,
            rest_law: &rest_law,
            counts: &counts,
        };

        for (h, &hub) in hubs.iter().enumerate() {
            emit_background(&bg, Some(hub), hub_volume, &reserved, &mut rng, &mut out);
            let slots = &mut active[h];
            slots.retain(|c| c.left > 0);
            while slots.len() < spec.campaigns_per_hub as usize {
                let caller = new_caller(hub, &mut reserved, &mut rng);
                let duration = rng.gen_range(spec.campaign_days.0..=spec.campaign_days.1);
                // Stagger the first campaigns so they do not all end together.
                let left = if day == 0 { rng.gen_range(1..=duration) } else { duration };
                let share = rng.gen_range(spec.campaign_share.0..=spec.campaign_share.1);
                slots.push(ActiveCampaign { caller, share, left });
            }
            for c in slots.iter_mut() {
                push_calls(&mut out, date, c.caller, (c.share * hub_volume as f64).round() as u64);
                c.left -= 1;
            }
        }
        emit_background(&bg, None, rest_volume, &reserved, &mut rng, &mut out);

        quiet.retain(|(_, c)| c.left > 0);
        while quiet.len() < spec.quiet_campaigns.min(rest.len() as u32) as usize {
            let count = rng.gen_range(spec.quiet_count.0..=spec.quiet_count.1);
            let share = rng.gen_range(spec.quiet_share.0..=spec.quiet_share.1);
            let target = f64::from(count) / share;
            let slot = (0..rest.len())
                .filter(|i| quiet.iter().all(|(j, _)| j != i))
                .min_by(|&a, &b| (expected[a] - target).abs().total_cmp(&(expected[b] - target).abs()))
                .expect("free area code");
            let caller = new_caller(rest[slot], &mut reserved, &mut rng);
            let duration = rng.gen_range(spec.campaign_days.0..=spec.campaign_days.1);
            let left = if day == 0 { rng.gen_range(1..=duration) } else { duration };
            quiet.push((slot, ActiveCampaign { caller, share: f64::from(count), left }));
        }
        for (_, c) in quiet.iter_mut() {
            push_calls(&mut out, date, c.caller, c.share as u64);
            c.left -= 1;
        }

        for (c, &v) in spec.planted.iter().zip(&planted) {
            if (c.start..c.start + c.days).contains(&day) {
                push_calls(&mut out, date, v, u64::from(c.count));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simharness::dataset::{calls_by_day, count_calls};

    #[test]
    fn planted_campaign_is_exact() {
        let spec = SynthSpec {
            days: 7,
            planted: vec!["202:500:5".parse().unwrap()],
            ..Default::default()
        };
        let records = generate_synthetic(&spec, 7).unwrap();
        let days = calls_by_day(&records);
        assert_eq!(days.len(), 7);
        let caller = records
            .iter()
            .find(|r| r.caller_id.prefix().value() == 202 && r.label.is_some() && count_calls(&days[&r.date])[&r.caller_id] == 500)
            .map(|r| r.caller_id)
            .expect("planted caller present");
        for (i, (_, calls)) in days.iter().enumerate() {
            let n = count_calls(calls).get(&caller).copied().unwrap_or(0);
            assert_eq!(n, if i < 5 { 500 } else { 0 }, "day {i}");
        }
    }

    #[test]
    fn most_callers_seen_once() {
        let records = generate_synthetic(&SynthSpec::default(), 1).unwrap();
        for calls in calls_by_day(&records).values() {
            let counts = count_calls(calls);
            let once = counts.values().filter(|&&c| c == 1).count();
            assert!(once as f64 / counts.len() as f64 > 0.8);
        }
    }

    #[test]
    fn weekends_are_quieter() {
        let spec = SynthSpec::default();
        let days = calls_by_day(&generate_synthetic(&spec, 2).unwrap());
        let (mut we, mut wd) = (Vec::new(), Vec::new());
        for (date, calls) in &days {
            if date.weekday().num_days_from_monday() >= 5 {
                we.push(calls.len());
            } else {
                wd.push(calls.len());
            }
            assert!(calls.len() <= 23_188);
        }
        assert!(we.iter().max() < wd.iter().min());
        assert_eq!(days.len(), 29);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SynthSpec { days: 3, ..Default::default() };
        assert_eq!(generate_synthetic(&spec, 5).unwrap(), generate_synthetic(&spec, 5).unwrap());
        assert_ne!(generate_synthetic(&spec, 5).unwrap(), generate_synthetic(&spec, 6).unwrap());
    }

    #[test]
    fn campaign_parse() {
        let c: Campaign = "202:500:5".parse().unwrap();
        assert_eq!((c.prefix.value(), c.count, c.days, c.start), (202, 500, 5, 0));
        assert!("202:500".parse::<Campaign>().is_err());
        assert!("2020:500:5".parse::<Campaign>().is_err());
        let bad = SynthSpec { days: 3, planted: vec![c], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
