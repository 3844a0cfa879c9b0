//! Complaint records and their CSV form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_caller_id, AreaCode, PhoneNumber};

pub const HEADER: [&str; 4] = ["date", "caller_id", "victim_prefix", "label"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot open {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header must start with date,caller_id and may add victim_prefix,label; got {0:?}")]
    HeaderMismatch(Vec<String>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComplaintRecord {
    pub date: NaiveDate,
    pub caller_id: PhoneNumber,
    pub victim_prefix: Option<AreaCode>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    pub records: Vec<ComplaintRecord>,
    pub dropped: usize,
}

impl Ingested {
    pub fn retention(&self) -> f64 {
        let total = self.records.len() + self.dropped;
        if total == 0 {
            1.0
        } else {
            self.records.len() as f64 / total as f64
        }
    }
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    let day = raw.get(..10).unwrap_or(raw);
    NaiveDate::parse_from_str(day, "%Y-%m-%d").ok()
}

/// Read complaints from CSV. Rows with an invalid date or caller ID are
/// dropped and counted; an invalid victim prefix is blanked.
pub fn read_csv<R: Read>(reader: R) -> Result<Ingested, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let ok = header.len() >= 2 && header.len() <= 4 && header.iter().zip(HEADER).all(|(h, e)| h == e);
    if !ok {
        return Err(DatasetError::HeaderMismatch(header));
    }
    let mut out = Ingested::default();
    for row in rdr.records() {
        let row = row?;
        let date = row.get(0).and_then(parse_date);
        let caller = row.get(1).and_then(|s| parse_caller_id(s).ok());
        let (Some(date), Some(caller_id)) = (date, caller) else {
            out.dropped += 1;
            continue;
        };
        let victim_prefix = row.get(2).and_then(|s| s.trim().parse().ok());
        let label = row.get(3).map(str::trim).filter(|s| !s.is_empty()).map(String::from);
        out.records.push(ComplaintRecord {
            date,
            caller_id,
            victim_prefix,
            label,
        });
    }
    if out.dropped > 0 {
        log::info!(
            "ingest: kept {} records, dropped {} ({:.1}% retained)",
            out.records.len(),
            out.dropped,
            100.0 * out.retention()
        );
    }
    Ok(out)
}

pub fn ingest_csv(path: &Path) -> Result<Ingested, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file))
}

pub fn write_csv<W: Write>(writer: W, records: &[ComplaintRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.caller_id.to_string(),
            r.victim_prefix.map(|p| p.to_string()).unwrap_or_default(),
            r.label.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(path: &Path, records: &[ComplaintRecord]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|source| DatasetError::File {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(std::io::BufWriter::new(file), records)
}

/// Calls per day, in record order.
pub fn calls_by_day(records: &[ComplaintRecord]) -> BTreeMap<NaiveDate, Vec<PhoneNumber>> {
    let mut days: BTreeMap<NaiveDate, Vec<PhoneNumber>> = BTreeMap::new();
    for r in records {
        days.entry(r.date).or_default().push(r.caller_id);
    }
    days
}

/// Complaints per caller.
pub fn count_calls(calls: &[PhoneNumber]) -> BTreeMap<PhoneNumber, u64> {
    let mut counts = BTreeMap::new();
    for v in calls {
        *counts.entry(*v).or_insert(0) += 1;
    }
    counts
}
