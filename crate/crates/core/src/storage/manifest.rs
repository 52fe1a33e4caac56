//! Append-only manifest records.
//!
//! ```text
//! SBBMANIFEST v1 policy=<prioritized|fifo> budget=<bytes|unlimited> lambda=<f64>
//! STORE id=<u64> vstar=<f64> bytes=<u64> tags=<kind,..|-> range=<first>-<last> file=<path> sha256=<hex> oversize=<0|1>
//! RELEASE id=<u64> frame=<u64> bytes=<u64>
//! EVICT id=<u64>
//! ```
//!
//! `RELEASE` marks that a frame's payload is now owned by a newer buffer and
//! gives the owning buffer's new accounted size.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::events::EventKind;
use crate::storage::queue::Policy;

pub const MAGIC: &str = "SBBMANIFEST";
pub const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestHeader {
    pub policy: Policy,
    pub budget: Option<u64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub id: u64,
    pub vstar: f64,
    pub bytes: u64,
    pub tags: Vec<EventKind>,
    pub first: u64,
    pub last: u64,
    pub file: String,
    pub sha256: String,
    pub oversize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Store(StoreRecord),
    Release { id: u64, frame: u64, bytes: u64 },
    Evict { id: u64 },
}

impl Record {
    pub fn id(&self) -> u64 {
        match self {
            Record::Store(s) => s.id,
            Record::Release { id, .. } | Record::Evict { id } => *id,
        }
    }
}

impl fmt::Display for ManifestHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{MAGIC} {VERSION} policy={} budget=", self.policy)?;
        match self.budget {
            Some(b) => write!(f, "{b}")?,
            None => f.write_str("unlimited")?,
        }
        write!(f, " lambda={:?}", self.lambda)
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Record::Store(s) => {
                let tags = if s.tags.is_empty() {
                    "-".to_string()
                } else {
                    s.tags.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
                };
                write!(
                    f,
                    "STORE id={} vstar={:?} bytes={} tags={} range={}-{} file={} sha256={} oversize={}",
                    s.id,
                    s.vstar,
                    s.bytes,
                    tags,
                    s.first,
                    s.last,
                    s.file,
                    s.sha256,
                    u8::from(s.oversize)
                )
            }
            Record::Release { id, frame, bytes } => {
                write!(f, "RELEASE id={id} frame={frame} bytes={bytes}")
            }
            Record::Evict { id } => write!(f, "EVICT id={id}"),
        }
    }
}

fn fields<'a>(
    tokens: impl Iterator<Item = &'a str>,
) -> std::result::Result<HashMap<&'a str, &'a str>, String> {
    tokens
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| format!("token `{t}` is not key=value"))
        })
        .collect()
}

fn get<'a>(m: &HashMap<&str, &'a str>, key: &str) -> std::result::Result<&'a str, String> {
    m.get(key).copied().ok_or_else(|| format!("missing `{key}`"))
}

fn num<T: std::str::FromStr>(m: &HashMap<&str, &str>, key: &str) -> std::result::Result<T, String> {
    get(m, key)?.parse().map_err(|_| format!("bad value for `{key}`"))
}

pub fn parse_header(line: &str) -> Result<ManifestHeader> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let mut it = line.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(bad("not a manifest".into()));
    }
    match it.next() {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported manifest version {other:?}"))),
    }
    let m = fields(it).map_err(bad)?;
    let policy = get(&m, "policy").map_err(bad)?.parse::<Policy>()?;
    let budget = match get(&m, "budget").map_err(bad)? {
        "unlimited" => None,
        b => Some(b.parse().map_err(|_| bad("bad budget".into()))?),
    };
    let lambda = num(&m, "lambda").map_err(bad)?;
    Ok(ManifestHeader {
        policy,
        budget,
        lambda,
    })
}

pub fn parse_record(line: &str, line_no: usize) -> Result<Record> {
    let bad = |msg: String| Error::Parse { line: line_no, msg };
    let mut it = line.split_whitespace();
    let kind = it.next().ok_or_else(|| bad("empty record".into()))?;
    let m = fields(it).map_err(bad)?;
    let rec = match kind {
        "STORE" => {
            let tags = match get(&m, "tags").map_err(bad)? {
                "-" => Vec::new(),
                t => t
                    .split(',')
                    .map(|s| s.parse::<EventKind>())
                    .collect::<Result<Vec<_>>>()?,
            };
            let (first, last) = get(&m, "range")
                .map_err(bad)?
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| bad("bad range".into()))?;
            let oversize = match get(&m, "oversize").map_err(bad)? {
                "0" => false,
                "1" => true,
                _ => return Err(bad("bad oversize flag".into())),
            };
            let sha256 = get(&m, "sha256").map_err(bad)?.to_string();
            if sha256.len() != 64 || !sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad("bad sha256".into()));
            }
            Record::Store(StoreRecord {
                id: num(&m, "id").map_err(bad)?,
                vstar: num(&m, "vstar").map_err(bad)?,
                bytes: num(&m, "bytes").map_err(bad)?,
                tags,
                first,
                last,
                file: get(&m, "file").map_err(bad)?.to_string(),
                sha256,
                oversize,
            })
        }
        "RELEASE" => Record::Release {
            id: num(&m, "id").map_err(bad)?,
            frame: num(&m, "frame").map_err(bad)?,
            bytes: num(&m, "bytes").map_err(bad)?,
        },
        "EVICT" => Record::Evict {
            id: num(&m, "id").map_err(bad)?,
        },
        other => return Err(bad(format!("unknown record `{other}`"))),
    };
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let recs = [
            Record::Store(StoreRecord {
                id: 7,
                vstar: 0.1 + 0.2,
                bytes: 123_456,
                tags: vec![EventKind::Cutin, EventKind::Crash],
                first: 100,
                last: 679,
                file: "buffers/7.bin".into(),
                sha256: "ab".repeat(32),
                oversize: true,
            }),
            Record::Store(StoreRecord {
                id: 8,
                vstar: 0.0,
                bytes: 1,
                tags: vec![],
                first: 0,
                last: 0,
                file: "buffers/8.bin".into(),
                sha256: "0".repeat(64),
                oversize: false,
            }),
            Record::Release {
                id: 7,
                frame: 120,
                bytes: 99,
            },
            Record::Evict { id: 7 },
        ];
        for r in recs {
            assert_eq!(parse_record(&r.to_string(), 1).unwrap(), r);
        }
    }

    #[test]
    fn header_round_trip() {
        for budget in [None, Some(1_000_000)] {
            let h = ManifestHeader {
                policy: Policy::Fifo,
                budget,
                lambda: 1e-4,
            };
            assert_eq!(parse_header(&h.to_string()).unwrap(), h);
        }
        assert!(parse_header("SBBMANIFEST v2 policy=fifo budget=1 lambda=0.1").is_err());
    }

    #[test]
    fn truncated_record_rejected() {
        let full = Record::Evict { id: 12 }.to_string();
        assert!(parse_record("STORE id=1 vstar=0.5 bytes=10 tags=- range=1-2 file=x", 3).is_err());
        assert!(parse_record(&full[..5], 3).is_err());
    }
}
