//! Sliding-window blacklist, detection tallies and call-blocking rate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::PhoneNumber;

pub const DEFAULT_WINDOW_DAYS: u32 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlacklistError {
    #[error("update for {got} precedes last update {last}")]
    NonMonotonicDate { last: NaiveDate, got: NaiveDate },
}

/// Caller IDs seen as heavy hitters within the last `window` days.
///
/// After the update for day `d` the list holds every heavy hitter of days
/// `d - window + 1 ..= d`. The list deployed on day `d + 1` is the one
/// produced by the update for day `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blacklist {
    window: u32,
    entries: BTreeMap<PhoneNumber, NaiveDate>,
    last_update: Option<NaiveDate>,
}

impl Default for Blacklist {
    fn default() -> Self {
        Blacklist::new(DEFAULT_WINDOW_DAYS)
    }
}

impl Blacklist {
    pub fn new(window: u32) -> Self {
        assert!(window >= 1, "window must be at least one day");
        Blacklist {
            window,
            entries: BTreeMap::new(),
            last_update: None,
        }
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn last_update(&self) -> Option<NaiveDate> {
        self.last_update
    }

    /// Add the day's heavy hitters and forget entries that fell out of the window.
    pub fn update<'a, I>(&mut self, daily: I, date: NaiveDate) -> Result<(), BlacklistError>
    where
        I: IntoIterator<Item = &'a PhoneNumber>,
    {
        if let Some(last) = self.last_update {
            if date < last {
                return Err(BlacklistError::NonMonotonicDate { last, got: date });
            }
        }
        for v in daily {
            self.entries.insert(*v, date);
        }
        let oldest = date - Days::new(u64::from(self.window) - 1);
        self.entries.retain(|_, seen| *seen >= oldest);
        self.last_update = Some(date);
        Ok(())
    }

    pub fn contains(&self, v: &PhoneNumber) -> bool {
        self.entries.contains_key(v)
    }

    pub fn last_seen(&self, v: &PhoneNumber) -> Option<NaiveDate> {
        self.entries.get(v).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PhoneNumber> {
        self.entries.keys()
    }

    /// JSON metadata line followed by one caller ID per line, sorted.
    pub fn export<W: Write>(&self, out: &mut W, meta: &ExportMeta) -> io::Result<()> {
        serde_json::to_writer(&mut *out, meta)?;
        out.write_all(b"\n")?;
        for v in self.entries.keys() {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }
}

/// Header of an exported blacklist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub date: NaiveDate,
    pub window: u32,
    pub tau: u32,
    pub eps_hh: f64,
    pub eps_olh: f64,
    pub entries: usize,
}

/// Detection tallies of one day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub thh: u64,
    pub fhh: u64,
    pub uhh: u64,
}

/// Classify every caller that is truly heavy or estimated heavy.
/// Callers without an estimate count as `f̂ = 0`.
pub fn classify(
    truth: &BTreeMap<PhoneNumber, u64>,
    estimates: &BTreeMap<PhoneNumber, f64>,
    tau: u32,
) -> Tally {
    let tau_c = u64::from(tau);
    let tau_f = f64::from(tau);
    let mut tally = Tally::default();
    for (v, &c) in truth {
        let est = estimates.get(v).copied().unwrap_or(0.0);
        match (c > tau_c, est > tau_f) {
            (true, true) => tally.thh += 1,
            (true, false) => tally.uhh += 1,
            (false, true) => tally.fhh += 1,
            (false, false) => {}
        }
    }
    for (v, &est) in estimates {
        if est > tau_f && !truth.contains_key(v) {
            tally.fhh += 1;
        }
    }
    tally
}

/// Precision, recall and F1; each is 0 when its denominator vanishes.
pub fn f1(tally: Tally) -> (f64, f64, f64) {
    let Tally { thh, fhh, uhh } = tally;
    let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = frac(thh, thh + fhh);
    let recall = frac(thh, thh + uhh);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f)
}

/// Fraction of calls whose caller is on the list; each call counts once.
pub fn cbr<'a, I>(blacklist: &Blacklist, calls: I) -> f64
where
    I: IntoIterator<Item = &'a PhoneNumber>,
{
    let (mut blocked, mut total) = (0u64, 0u64);
    for v in calls {
        total += 1;
        blocked += u64::from(blacklist.contains(v));
    }
    if total == 0 {
        0.0
    } else {
        blocked as f64 / total as f64
    }
}

/// [`cbr`] over per-caller call counts.
pub fn cbr_counts(blacklist: &Blacklist, calls: &BTreeMap<PhoneNumber, u64>) -> f64 {
    let total: u64 = calls.values().sum();
    if total == 0 {
        return 0.0;
    }
    let blocked: u64 = calls
        .iter()
        .filter(|(v, _)| blacklist.contains(v))
        .map(|(_, &c)| c)
        .sum();
    blocked as f64 / total as f64
}

/// Callers whose true daily count exceeds `theta`.
pub fn true_heavy_hitters(truth: &BTreeMap<PhoneNumber, u64>, theta: u32) -> BTreeSet<PhoneNumber> {
    truth
        .iter()
        .filter(|(_, &c)| c > u64::from(theta))
        .map(|(&v, _)| v)
        .collect()
}
