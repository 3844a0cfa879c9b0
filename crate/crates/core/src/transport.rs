//! Wire format and delivery carriers.
//!
//! Every message is one line of canonical JSON: object keys sorted, no
//! insignificant whitespace, terminated by `\n`.
//!
//! ```text
//! {"day":"2016-02-17","kind":"SPARSE_REPORT","payload":{...},"sender":"u17","v":1}
//! ```
//!
//! | kind              | payload                                                      |
//! |-------------------|--------------------------------------------------------------|
//! | `PREFIX_ANNOUNCE` | `{"prefix":"202"}`                                           |
//! | `GO_LIST`         | `{"buckets":[{"channels","contributors","prefix"}],"family":{"channels","coefficients","modulus"},"tau"}` |
//! | `SPARSE_REPORT`   | `{"branch":"enc"|"zero","channel","index","prefix","round","sign"}` |
//! | `OLH_REPORT`      | `{"g","prefix","seed":"<16 hex digits>","value"}`             |
//! | `HH_PUBLISH`      | `{"heavy_hitters":[{"caller_id","estimate"}]}`               |
//!
//! Sparse report values travel as a sign and a branch tag; the receiver
//! rebuilds the magnitude `c·sqrt(m)` from the shared parameters.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codec::AreaCode;
use crate::randomizer::{OlhReport, SparseReport};
use crate::server::{GoList, HeavyHitter};

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("wire version {got}, expected {expected}")]
    VersionMismatch { got: u64, expected: u8 },
    #[error("carrier closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixAnnounce {
    pub prefix: AreaCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HhPublish {
    pub heavy_hitters: Vec<HeavyHitter>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    PrefixAnnounce(PrefixAnnounce),
    GoList(GoList),
    SparseReport(SparseReport),
    OlhReport(OlhReport),
    HhPublish(HhPublish),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::PrefixAnnounce(_) => "PREFIX_ANNOUNCE",
            Payload::GoList(_) => "GO_LIST",
            Payload::SparseReport(_) => "SPARSE_REPORT",
            Payload::OlhReport(_) => "OLH_REPORT",
            Payload::HhPublish(_) => "HH_PUBLISH",
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::PrefixAnnounce(p) => serde_json::to_value(p),
            Payload::GoList(p) => serde_json::to_value(p),
            Payload::SparseReport(p) => serde_json::to_value(p),
            Payload::OlhReport(p) => serde_json::to_value(p),
            Payload::HhPublish(p) => serde_json::to_value(p),
        };
        v.expect("payload types serialize infallibly")
    }

    fn from_value(kind: &str, value: Value) -> Result<Self, TransportError> {
        let bad = |e: serde_json::Error| TransportError::MalformedMessage(format!("{kind} payload: {e}"));
        Ok(match kind {
            "PREFIX_ANNOUNCE" => Payload::PrefixAnnounce(serde_json::from_value(value).map_err(bad)?),
            "GO_LIST" => Payload::GoList(serde_json::from_value(value).map_err(bad)?),
            "SPARSE_REPORT" => Payload::SparseReport(serde_json::from_value(value).map_err(bad)?),
            "OLH_REPORT" => Payload::OlhReport(serde_json::from_value(value).map_err(bad)?),
            "HH_PUBLISH" => Payload::HhPublish(serde_json::from_value(value).map_err(bad)?),
            other => return Err(TransportError::MalformedMessage(format!("unknown kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub version: u8,
    pub day: NaiveDate,
    pub sender: String,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(day: NaiveDate, sender: impl Into<String>, payload: Payload) -> Self {
        Envelope {
            version: WIRE_VERSION,
            day,
            sender: sender.into(),
            payload,
        }
    }
}

/// Canonical encoding, newline included.
pub fn encode_envelope(e: &Envelope) -> Vec<u8> {
    let mut obj = serde_json::Map::new();
    obj.insert("v".into(), Value::from(e.version));
    obj.insert("day".into(), Value::from(e.day.format("%Y-%m-%d").to_string()));
    obj.insert("sender".into(), Value::from(e.sender.clone()));
    obj.insert("kind".into(), Value::from(e.payload.kind()));
    obj.insert("payload".into(), e.payload.to_value());
    // `serde_json::Map` is ordered by key, nested maps included.
    let mut out = serde_json::to_vec(&Value::Object(obj)).expect("values serialize infallibly");
    out.push(b'\n');
    out
}

/// Decode one message; a trailing newline is optional.
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, TransportError> {
    let bytes = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| TransportError::MalformedMessage(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(TransportError::MalformedMessage("not an object".into()));
    };
    let mut take = |key: &str| {
        obj.remove(key)
            .ok_or_else(|| TransportError::MalformedMessage(format!("missing field {key:?}")))
    };
    let version = take("v")?
        .as_u64()
        .ok_or_else(|| TransportError::MalformedMessage("v is not an integer".into()))?;
    if version != u64::from(WIRE_VERSION) {
        return Err(TransportError::VersionMismatch {
            got: version,
            expected: WIRE_VERSION,
        });
    }
    let day = take("day")?;
    let day = day
        .as_str()
        .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
        .ok_or_else(|| TransportError::MalformedMessage(format!("bad day {day}")))?;
    let sender = match take("sender")? {
        Value::String(s) => s,
        other => return Err(TransportError::MalformedMessage(format!("bad sender {other}"))),
    };
    let kind = match take("kind")? {
        Value::String(s) => s,
        other => return Err(TransportError::MalformedMessage(format!("bad kind {other}"))),
    };
    let payload = Payload::from_value(&kind, take("payload")?)?;
    if let Some(extra) = obj.keys().next() {
        return Err(TransportError::MalformedMessage(format!("unknown field {extra:?}")));
    }
    Ok(Envelope {
        version: WIRE_VERSION,
        day,
        sender,
        payload,
    })
}

/// Sending half of a carrier.
pub trait Outbox {
    fn send(&mut self, e: &Envelope) -> Result<(), TransportError>;
}

/// Receiving half of a carrier. `Ok(None)` means the peer closed.
pub trait Inbox {
    fn recv(&mut self) -> Result<Option<Envelope>, TransportError>;

    fn drain(&mut self) -> Result<Vec<Envelope>, TransportError> {
        let mut out = Vec::new();
        while let Some(e) = self.recv()? {
            out.push(e);
        }
        Ok(out)
    }
}

/// In-process carrier; messages cross as encoded bytes.
#[derive(Debug, Clone)]
pub struct LoopbackOutbox(mpsc::Sender<Vec<u8>>);

#[derive(Debug)]
pub struct LoopbackInbox(mpsc::Receiver<Vec<u8>>);

pub fn loopback() -> (LoopbackOutbox, LoopbackInbox) {
    let (tx, rx) = mpsc::channel();
    (LoopbackOutbox(tx), LoopbackInbox(rx))
}

impl Outbox for LoopbackOutbox {
    fn send(&mut self, e: &Envelope) -> Result<(), TransportError> {
        self.0.send(encode_envelope(e)).map_err(|_| TransportError::Closed)
    }
}

impl Inbox for LoopbackInbox {
    fn recv(&mut self) -> Result<Option<Envelope>, TransportError> {
        match self.0.recv() {
            Ok(bytes) => decode_envelope(&bytes).map(Some),
            Err(_) => Ok(None),
        }
    }
}

/// Newline-framed TCP carrier.
#[derive(Debug)]
pub struct SocketOutbox(TcpStream);

#[derive(Debug)]
pub struct SocketInbox(BufReader<TcpStream>);

impl SocketOutbox {
    pub fn new(stream: TcpStream) -> Self {
        SocketOutbox(stream)
    }

    /// Close the write side so the peer sees end of stream.
    pub fn finish(self) -> io::Result<()> {
        self.0.shutdown(std::net::Shutdown::Write)
    }
}

impl SocketInbox {
    pub fn new(stream: TcpStream) -> Self {
        SocketInbox(BufReader::new(stream))
    }
}

impl Outbox for SocketOutbox {
    fn send(&mut self, e: &Envelope) -> Result<(), TransportError> {
        self.0.write_all(&encode_envelope(e))?;
        Ok(())
    }
}

impl Inbox for SocketInbox {
    fn recv(&mut self) -> Result<Option<Envelope>, TransportError> {
        let mut line = Vec::new();
        if self.0.read_until(b'\n', &mut line)? == 0 {
            return Ok(None);
        }
        if line.last() != Some(&b'\n') {
            return Err(TransportError::MalformedMessage("truncated frame".into()));
        }
        decode_envelope(&line).map(Some)
    }
}
