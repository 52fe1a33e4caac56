//! End-to-end recording: label, value and segment the frame stream, then
//! optimize, compress and store each emitted buffer.
//!
//! Segmentation does not depend on the optimization weights or the storage
//! budget, so parameter sweeps and policy comparisons segment once and
//! replay the buffers.

use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::compressor::Compressor;
use crate::config::{LboConfig, LboMode, PipelineConfig, SourceConfig};
use crate::domain::{build_feature_vector, FrameRecord, GeometryConfig, NormBounds, Payload};
use crate::error::{Error, Result};
use crate::events::{detect, EventKind};
use crate::lbo::{relative_costs, solve_coupled, solve_decoupled_buffer, LboWeights};
use crate::metrics::{capture_table, compute_report, CaptureTable, RecordedFrame, RecordingReport};
use crate::storage::{IncomingFrame, Policy, StorageConfig, Store};
use crate::tracker::{Termination, TrackedFrame, Tracker, TrackerConfig};
use crate::trafficgen;
use crate::trajectory::{self, Trajectory};
use crate::value::{gaussian_filter, ModelFile, ValueConfig, ValueModel};

/// Upper speed bound for geometric normalization when no model supplies bounds.
pub const DEFAULT_MAX_SPEED: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFrame {
    pub frame_index: u64,
    pub label: EventKind,
    /// Unfiltered value.
    pub value: f64,
    pub raw_size: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub frames: Vec<SegmentFrame>,
    pub termination: Option<Termination>,
}

/// Every emitted buffer of one trajectory plus its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub labels: Vec<(u64, EventKind)>,
}

impl Segmentation {
    pub fn eoi_frames(&self) -> Vec<u64> {
        self.labels
            .iter()
            .filter(|(_, k)| k.is_eoi())
            .map(|(i, _)| *i)
            .collect()
    }

    pub fn truth(&self) -> Vec<EventKind> {
        self.labels.iter().map(|(_, k)| *k).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub zeta: f64,
    pub avpf: f64,
    pub ampf: f64,
    pub vpm: Option<f64>,
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from("eta\tzeta\tavpf\tampf\tvpm\n");
    for r in rows {
        let vpm = r.vpm.map_or("NA".to_string(), |v| format!("{v:.6e}"));
        s.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.3}\t{}\n",
            r.eta, r.zeta, r.avpf, r.ampf, vpm
        ));
    }
    s
}

/// Capture tables for one storage budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub budget: Option<u64>,
    pub table: CaptureTable,
    pub reports: Vec<(String, RecordingReport)>,
}

pub struct Recording {
    pub store: Store,
    pub segmentation: Segmentation,
    pub report: RecordingReport,
}

/// Frames whose payload survives in `store`.
pub fn recorded_frames(store: &Store) -> Vec<RecordedFrame> {
    let mut out: Vec<RecordedFrame> = store
        .recorded_frames()
        .map(|f| RecordedFrame {
            frame_index: f.frame_index,
            label: f.label,
            value: f.value,
            quality: f.quality,
            bytes: f.bytes,
            raw_size: f.raw_size,
        })
        .collect();
    out.sort_by_key(|f| f.frame_index);
    out
}

/// All settings of a run with the valuation model loaded.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub geometry: GeometryConfig,
    pub tracker: TrackerConfig,
    pub value: ValueConfig,
    pub model: ValueModel,
    pub norm: NormBounds,
    pub lbo: LboConfig,
    pub compressor: Compressor,
}

impl Recorder {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let geometry = cfg.effective_geometry();
        let (model, norm) = match &cfg.model {
            Some(path) => {
                let file = ModelFile::load(path)?;
                (file.value_model(), file.norm_bounds)
            }
            None => (
                ValueModel::reference(),
                NormBounds::from_geometry(&geometry, DEFAULT_MAX_SPEED),
            ),
        };
        Ok(Self {
            geometry,
            tracker: cfg.tracker.clone(),
            value: cfg.value,
            model,
            norm,
            lbo: cfg.lbo,
            compressor: Compressor::new(cfg.compressor.clone(), cfg.lbo.curve),
        })
    }

    /// Label, value and segment a whole trajectory.
    pub fn segment(&self, frames: &[FrameRecord]) -> Result<Segmentation> {
        let normal_value = self
            .tracker
            .normal_value
            .unwrap_or_else(|| self.model.normal_value());
        let mut tracker: Tracker<SegmentFrame> = Tracker::new(self.tracker.clone(), normal_value)?;
        let mut segments = Vec::new();
        let mut labels = Vec::with_capacity(frames.len());
        let mut prev: Option<&FrameRecord> = None;
        for f in frames {
            let i = f.frame_index;
            if let Some(p) = prev {
                if i <= p.frame_index {
                    return Err(Error::Structural(format!(
                        "frame index {i} does not increase after {}",
                        p.frame_index
                    ))
                    .at(i, "input"));
                }
            }
            let label = detect(f, prev, &self.geometry);
            let value = self.model.frame_value(&label).map_err(|e| e.at(i, "value"))?;
            let features = build_feature_vector(f, &self.norm).map_err(|e| e.at(i, "features"))?;
            labels.push((i, label.kind));
            let tracked = TrackedFrame {
                frame_index: i,
                value,
                features,
                data: SegmentFrame {
                    frame_index: i,
                    label: label.kind,
                    value,
                    raw_size: f.raw_size,
                    payload: f.payload.clone(),
                },
            };
            if let Some(b) = tracker.push(tracked).map_err(|e| e.at(i, "tracker"))? {
                segments.push(Segment {
                    frames: b.frames.into_iter().map(|t| t.data).collect(),
                    termination: b.termination,
                });
            }
            prev = Some(f);
        }
        if let Some(b) = tracker.finish() {
            segments.push(Segment {
                frames: b.frames.into_iter().map(|t| t.data).collect(),
                termination: b.termination,
            });
        }
        debug!(
            "{} frames segmented into {} buffers",
            frames.len(),
            segments.len()
        );
        Ok(Segmentation { segments, labels })
    }

    /// Per-frame qualities for one buffer and the filtered values they were
    /// optimized against.
    pub fn optimize(&self, seg: &Segment, weights: &LboWeights) -> Result<(Vec<f64>, Vec<f64>)> {
        let raw: Vec<f64> = seg.frames.iter().map(|f| f.value).collect();
        let values = if self.value.filter {
            gaussian_filter(&raw, self.model.normal_value(), self.value.sigma_f)
        } else {
            raw
        };
        let sizes: Vec<u64> = seg.frames.iter().map(|f| f.raw_size).collect();
        let costs = relative_costs(&sizes);
        let d = match self.lbo.mode {
            LboMode::Decoupled => solve_decoupled_buffer(&values, &costs, &self.lbo.curve, weights),
            LboMode::Coupled => {
                let sol = solve_coupled(&values, &costs, &self.lbo.curve, weights, &self.lbo.solver)?;
                if !sol.converged {
                    debug!("coupled solve stopped at KKT residual {:.3e}", sol.kkt_residual);
                }
                sol.d
            }
        };
        Ok((d, values))
    }

    /// Optimize, compress and store every segment.
    pub fn write(&self, segments: &[Segment], weights: &LboWeights, store: &mut Store) -> Result<()> {
        for seg in segments {
            let first = seg.frames.first().map_or(0, |f| f.frame_index);
            let (d, values) = self.optimize(seg, weights).map_err(|e| e.at(first, "lbo"))?;
            let mut incoming = Vec::with_capacity(seg.frames.len());
            for ((f, q), v) in seg.frames.iter().zip(d).zip(values) {
                let c = self
                    .compressor
                    .compress(&f.payload, f.raw_size, q)
                    .map_err(|e| e.at(f.frame_index, "compress"))?;
                incoming.push(IncomingFrame {
                    frame_index: f.frame_index,
                    label: f.label,
                    value: v,
                    quality: q,
                    bytes: c.stored_size(),
                    raw_size: f.raw_size,
                    payload: c.bytes,
                });
            }
            store.push(incoming).map_err(|e| e.at(first, "storage"))?;
        }
        Ok(())
    }

    pub fn record(&self, frames: &[FrameRecord], mut store: Store) -> Result<Recording> {
        let segmentation = self.segment(frames)?;
        self.write(&segmentation.segments, &self.lbo.weights(), &mut store)?;
        let report = compute_report(&recorded_frames(&store), &segmentation.eoi_frames());
        info!(
            "recorded {} of {} frames in {} buffers ({} bytes)",
            report.frames,
            frames.len(),
            store.len(),
            store.total_bytes()
        );
        Ok(Recording {
            store,
            segmentation,
            report,
        })
    }

    /// One grid point of a sweep, always with unlimited storage.
    pub fn sweep_point(&self, seg: &Segmentation, weights: LboWeights) -> Result<SweepRow> {
        weights.validate()?;
        let mut store = Store::in_memory(StorageConfig {
            budget: None,
            ..StorageConfig::default()
        })?;
        self.write(&seg.segments, &weights, &mut store)?;
        let r = compute_report(&recorded_frames(&store), &seg.eoi_frames());
        Ok(SweepRow {
            eta: weights.eta,
            zeta: weights.zeta,
            avpf: r.avpf,
            ampf: r.ampf,
            vpm: r.vpm,
        })
    }

    pub fn sweep(&self, seg: &Segmentation, grid: &[LboWeights]) -> Result<Vec<SweepRow>> {
        if grid.is_empty() {
            return Err(Error::Input("sweep grid is empty".into()));
        }
        grid.iter().map(|w| self.sweep_point(seg, *w)).collect()
    }

    /// Recorded frames under one policy and budget.
    pub fn replay(&self, seg: &Segmentation, storage: StorageConfig) -> Result<Vec<RecordedFrame>> {
        let mut store = Store::in_memory(storage)?;
        self.write(&seg.segments, &self.lbo.weights(), &mut store)?;
        Ok(recorded_frames(&store))
    }

    /// The same buffers fed to each policy under one budget.
    pub fn compare(
        &self,
        seg: &Segmentation,
        budget: Option<u64>,
        policies: &[Policy],
        lambda: f64,
    ) -> Result<Comparison> {
        let mut recordings = Vec::with_capacity(policies.len());
        for p in policies {
            let cfg = StorageConfig {
                budget,
                lambda,
                policy: *p,
            };
            recordings.push((p.name().to_string(), self.replay(seg, cfg)?));
        }
        let truth = seg.truth();
        let table = capture_table(recordings.iter().map(|(n, f)| (n.as_str(), f.as_slice())), &truth);
        let eoi = seg.eoi_frames();
        let reports = recordings
            .iter()
            .map(|(n, f)| (n.clone(), compute_report(f, &eoi)))
            .collect();
        Ok(Comparison {
            budget,
            table,
            reports,
        })
    }
}

/// Load or generate the configured trajectory.
pub fn load_source(cfg: &PipelineConfig) -> Result<Trajectory> {
    match &cfg.source {
        SourceConfig::File { path } => trajectory::load(path, &cfg.effective_geometry()),
        SourceConfig::Generator(sim) => trafficgen::generate(sim, &cfg.geometry),
    }
}

/// Weight grid `eta x zeta`.
pub fn weight_grid(etas: &[f64], zetas: &[f64]) -> Vec<LboWeights> {
    etas.iter()
        .flat_map(|e| zetas.iter().map(move |z| LboWeights { eta: *e, zeta: *z }))
        .collect()
}

/// Full recording into `out_dir`: manifest, buffer files, report and the
/// resolved configuration.
pub fn run_record(cfg: &PipelineConfig, out_dir: &Path) -> Result<RecordingReport> {
    let recorder = Recorder::from_config(cfg)?;
    let traj = load_source(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.save(&out_dir.join("config.toml"))?;
    let store = Store::create(out_dir, cfg.storage)?;
    let rec = recorder.record(&traj.frames, store)?;
    let json = serde_json::to_string_pretty(&rec.report).expect("report serializes");
    let path = out_dir.join("report.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("report.tsv");
    std::fs::write(&path, rec.report.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(rec.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventLabel;
    use crate::trafficgen::{inject_event, SimConfig};

    fn quick_config(seed: u64, duration: f64) -> PipelineConfig {
        PipelineConfig {
            source: SourceConfig::Generator(SimConfig {
                seed,
                duration,
                ..SimConfig::default()
            }),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn empty_trajectory() {
        let cfg = quick_config(0, 10.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let rec = r
            .record(&[], Store::in_memory(StorageConfig::default()).unwrap())
            .unwrap();
        assert_eq!(rec.report.frames, 0);
        assert!(rec.store.is_empty());
    }

    #[test]
    fn records_every_frame_when_unlimited() {
        let cfg = quick_config(1, 120.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let traj = load_source(&cfg).unwrap();
        let rec = r
            .record(&traj.frames, Store::in_memory(cfg.storage).unwrap())
            .unwrap();
        let got: Vec<u64> = recorded_frames(&rec.store)
            .iter()
            .map(|f| f.frame_index)
            .collect();
        let want: Vec<u64> = traj.frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn crash_buffer_survives() {
        let cfg = quick_config(2, 120.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let mut traj = load_source(&cfg).unwrap();
        let at = traj.frames.len() - 200;
        inject_event(&mut traj, EventLabel::of(EventKind::Crash), at, &r.geometry).unwrap();
        let seg = r.segment(&traj.frames).unwrap();
        let crash_size: u64 = {
            let mut s = Store::in_memory(StorageConfig::default()).unwrap();
            r.write(&seg.segments[seg.segments.len() - 1..], &r.lbo.weights(), &mut s)
                .unwrap();
            s.total_bytes()
        };
        for budget in [crash_size, 2 * crash_size, 10 * crash_size] {
            for policy in [Policy::Prioritized, Policy::Fifo] {
                let frames = r
                    .replay(
                        &seg,
                        StorageConfig {
                            budget: Some(budget),
                            lambda: 1e-4,
                            policy,
                        },
                    )
                    .unwrap();
                assert!(
                    frames.iter().any(|f| f.label == EventKind::Crash),
                    "{budget} {policy}"
                );
            }
        }
    }

    #[test]
    fn filter_off_matches_narrow_filter() {
        let mut cfg = quick_config(3, 120.0);
        let traj = load_source(&cfg).unwrap();
        cfg.value.filter = false;
        let off = Recorder::from_config(&cfg)
            .unwrap()
            .record(&traj.frames, Store::in_memory(cfg.storage).unwrap())
            .unwrap();
        cfg.value.filter = true;
        cfg.value.sigma_f = 1e-3;
        let narrow = Recorder::from_config(&cfg)
            .unwrap()
            .record(&traj.frames, Store::in_memory(cfg.storage).unwrap())
            .unwrap();
        assert!((off.report.avpf - narrow.report.avpf).abs() < 1e-12);
        assert!((off.report.ampf - narrow.report.ampf).abs() < 1e-9);
    }

    #[test]
    fn stage_errors_name_the_frame() {
        let cfg = quick_config(4, 5.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let mut traj = load_source(&cfg).unwrap();
        traj.frames[10].frame_index = 3;
        match r.segment(&traj.frames) {
            Err(Error::Stage {
                frame: 3,
                stage: "input",
                ..
            }) => {}
            other => panic!("{:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn sweep_shapes() {
        let cfg = quick_config(5, 60.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let seg = r.segment(&load_source(&cfg).unwrap().frames).unwrap();
        assert_eq!(r.sweep(&seg, &weight_grid(&[0.9], &[1.7])).unwrap().len(), 1);
        assert!(r.sweep(&seg, &[]).is_err());
        let rows = r
            .sweep(&seg, &weight_grid(&[1.0], &[0.2, 0.8, 1.6, 3.0]))
            .unwrap();
        for w in rows.windows(2) {
            assert!(w[1].avpf >= w[0].avpf - 1e-12);
            assert!(w[1].ampf >= w[0].ampf - 1e-9);
        }
    }

    #[test]
    fn unlimited_comparison_is_identical() {
        let cfg = quick_config(6, 60.0);
        let r = Recorder::from_config(&cfg).unwrap();
        let seg = r.segment(&load_source(&cfg).unwrap().frames).unwrap();
        let c = r
            .compare(&seg, None, &[Policy::Prioritized, Policy::Fifo], 1e-4)
            .unwrap();
        assert_eq!(c.table.rows[0].counts, c.table.ground_truth.counts);
        assert_eq!(c.table.rows[1].counts, c.table.ground_truth.counts);
    }
}
