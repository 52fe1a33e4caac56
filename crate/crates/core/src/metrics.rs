//! Recording-quality metrics and per-policy capture tables.
//!
//! Report columns:
//! - `avpf`: mean of `value * quality` over recorded frames.
//! - `ampf`: mean stored bytes per recorded frame.
//! - `vpm`: `avpf / ampf`, absent when `ampf` is zero.
//! - per event: recorded frame count, mean and population standard deviation
//!   of quality, stored bytes, raw bytes.
//! - context (normal frames only): for each range `k`, the normal frames
//!   within `k` frames of a ground-truth event of interest, their share of
//!   all recorded normal frames, their bytes and share of normal bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::events::EventKind;

pub const CONTEXT_RANGES: [u64; 4] = [5, 10, 15, 20];

/// One frame whose payload survived in storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordedFrame {
    pub frame_index: u64,
    pub label: EventKind,
    /// Filtered value.
    pub value: f64,
    pub quality: f64,
    /// Stored bytes including metadata.
    pub bytes: u64,
    pub raw_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub kind: EventKind,
    pub frames: usize,
    pub mean_quality: f64,
    pub std_quality: f64,
    pub bytes: u64,
    pub raw_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub range: u64,
    pub frames: usize,
    pub frame_share: f64,
    pub bytes: u64,
    pub byte_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingReport {
    pub frames: usize,
    pub avpf: f64,
    pub ampf: f64,
    pub vpm: Option<f64>,
    pub per_event: Vec<EventStats>,
    pub context: Vec<ContextStats>,
}

fn share(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        part / whole
    } else {
        0.0
    }
}

/// Distance from `i` to the nearest member of the sorted `eoi`.
fn nearest_distance(eoi: &[u64], i: u64) -> Option<u64> {
    let pos = eoi.partition_point(|e| *e < i);
    let after = eoi.get(pos).map(|e| e - i);
    let before = pos.checked_sub(1).map(|p| i - eoi[p]);
    match (before, after) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Metrics over `frames`. `eoi_frames` are the ground-truth indices of
/// events of interest in the source trajectory.
pub fn compute_report(frames: &[RecordedFrame], eoi_frames: &[u64]) -> RecordingReport {
    let n = frames.len();
    let avpf = share(frames.iter().map(|f| f.value * f.quality).sum(), n as f64);
    let ampf = share(frames.iter().map(|f| f.bytes as f64).sum(), n as f64);
    let vpm = (ampf > 0.0).then(|| avpf / ampf);

    let per_event = EventKind::ALL
        .into_iter()
        .map(|kind| {
            let qs: Vec<f64> = frames
                .iter()
                .filter(|f| f.label == kind)
                .map(|f| f.quality)
                .collect();
            let k = qs.len() as f64;
            let mean = share(qs.iter().sum(), k);
            let var = share(qs.iter().map(|q| (q - mean).powi(2)).sum(), k);
            let of_kind = frames.iter().filter(|f| f.label == kind);
            EventStats {
                kind,
                frames: qs.len(),
                mean_quality: mean,
                std_quality: var.sqrt(),
                bytes: of_kind.clone().map(|f| f.bytes).sum(),
                raw_bytes: of_kind.map(|f| f.raw_size).sum(),
            }
        })
        .collect();

    let eoi: Vec<u64> = eoi_frames
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let normal: Vec<(Option<u64>, u64)> = frames
        .iter()
        .filter(|f| f.label == EventKind::Normal)
        .map(|f| (nearest_distance(&eoi, f.frame_index), f.bytes))
        .collect();
    let normal_bytes: u64 = normal.iter().map(|(_, b)| b).sum();
    let context = CONTEXT_RANGES
        .into_iter()
        .map(|range| {
            let near = normal.iter().filter(|(d, _)| d.is_some_and(|d| d <= range));
            let bytes: u64 = near.clone().map(|(_, b)| b).sum();
            let count = near.count();
            ContextStats {
                range,
                frames: count,
                frame_share: share(count as f64, normal.len() as f64),
                bytes,
                byte_share: share(bytes as f64, normal_bytes as f64),
            }
        })
        .collect();

    RecordingReport {
        frames: n,
        avpf,
        ampf,
        vpm,
        per_event,
        context,
    }
}

impl RecordingReport {
    pub fn event(&self, kind: EventKind) -> &EventStats {
        &self.per_event[kind.index()]
    }

    /// Tab-separated summary, per-event and context sections.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let vpm = self.vpm.map_or("NA".to_string(), |v| format!("{v:.6e}"));
        let _ = writeln!(s, "frames\tavpf\tampf\tvpm");
        let _ = writeln!(s, "{}\t{:.6}\t{:.3}\t{}", self.frames, self.avpf, self.ampf, vpm);
        let _ = writeln!(s, "\nevent\tframes\tmean_d\tstd_d\tbytes\traw_bytes");
        for e in &self.per_event {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{}\t{}",
                e.kind, e.frames, e.mean_quality, e.std_quality, e.bytes, e.raw_bytes
            );
        }
        let _ = writeln!(s, "\ncontext_range\tframes\tframe_share\tbytes\tbyte_share");
        for c in &self.context {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{}\t{:.4}",
                c.range, c.frames, c.frame_share, c.bytes, c.byte_share
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRow {
    pub name: String,
    /// Frame counts indexed by [`EventKind::index`].
    pub counts: [usize; 5],
}

impl CaptureRow {
    pub fn count(&self, kind: EventKind) -> usize {
        self.counts[kind.index()]
    }
}

/// Recorded frames per event, one row per policy after a ground-truth row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureTable {
    pub ground_truth: CaptureRow,
    pub rows: Vec<CaptureRow>,
}

fn count_kinds(labels: impl IntoIterator<Item = EventKind>) -> [usize; 5] {
    let mut c = [0; 5];
    for k in labels {
        c[k.index()] += 1;
    }
    c
}

pub fn capture_table<'a>(
    recordings: impl IntoIterator<Item = (&'a str, &'a [RecordedFrame])>,
    truth: &[EventKind],
) -> CaptureTable {
    CaptureTable {
        ground_truth: CaptureRow {
            name: "ground_truth".into(),
            counts: count_kinds(truth.iter().copied()),
        },
        rows: recordings
            .into_iter()
            .map(|(name, frames)| CaptureRow {
                name: name.to_string(),
                counts: count_kinds(frames.iter().map(|f| f.label)),
            })
            .collect(),
    }
}

impl CaptureTable {
    pub fn row(&self, name: &str) -> Option<&CaptureRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("policy");
        for k in EventKind::ALL {
            s.push('\t');
            s.push_str(k.name());
        }
        s.push('\n');
        for r in std::iter::once(&self.ground_truth).chain(&self.rows) {
            s.push_str(&r.name);
            for c in r.counts {
                let _ = write!(s, "\t{c}");
            }
            s.push('\n');
        }
        s
    }
}
