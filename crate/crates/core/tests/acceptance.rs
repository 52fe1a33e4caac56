//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, FisherF};

use sbb_core::config::{PipelineConfig, SourceConfig};
use sbb_core::domain::build_feature_vector;
use sbb_core::events::{detect, EventKind, EventLabel};
use sbb_core::lbo::{
    boundary_ratio, gradient, kkt_residual, objective, relative_costs, solve_coupled, solve_decoupled,
    solve_decoupled_buffer, LboWeights, QualityRatioCurve, SolverOptions,
};
use sbb_core::pipeline::{self, weight_grid, Recorder};
use sbb_core::storage::{EvictionQueue, Policy, PriorityKey, StorageConfig, Store};
use sbb_core::tracker::{TrackedFrame, Tracker, TrackerConfig};
use sbb_core::trafficgen::{self, inject_event, SimConfig};
use sbb_core::value::dist::Family;
use sbb_core::value::{event_value, fit_range_model, EventPriors, PriorSource, ValueModel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn sim(seed: u64, duration: f64) -> SimConfig {
    SimConfig {
        seed,
        duration,
        ..SimConfig::default()
    }
}

fn value_table() -> Outcome {
    let start = Instant::now();
    let priors = EventPriors::new([0.92, 0.045, 0.035, 0.0015, 1.19e-4], PriorSource::Reference)
        .map_err(|e| e.to_string())?;
    let expected = [
        (EventKind::Normal, 0.009),
        (EventKind::HardBraking, 0.37),
        (EventKind::Conflict, 0.72),
    ];
    let mut got = Vec::new();
    for (kind, want) in expected {
        let v = event_value(kind, &priors);
        check((v - want).abs() <= 0.02, || {
            format!("{kind} value {v:.4}, expected {want}")
        })?;
        got.push(format!("{kind} {v:.4}"));
    }
    let crash = event_value(EventKind::Crash, &priors);
    check(crash == 1.0, || format!("crash value {crash}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("{}, crash 1", got.join(", ")))
}

/// Size-ratio curve written out independently of the library.
fn oracle_phi(c: &QualityRatioCurve, d: f64) -> f64 {
    c.a3 - c.a1 * (1.0 - c.a2 * d).log2()
}

fn decoupled_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xdec0);
    let (mut worst_d, mut worst_obj) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let curve = QualityRatioCurve::new(
            rng.random_range(0.01..0.1),
            rng.random_range(0.9..0.999),
            rng.random_range(0.0..0.05),
        )
        .map_err(|e| e.to_string())?;
        let value: f64 = rng.random_range(0.001..1.0);
        let ratio = 10f64.powf(rng.random_range(-2.0..2.0));
        let w = LboWeights::new(1.0, ratio).map_err(|e| e.to_string())?;
        let d = solve_decoupled(value, 1.0, &curve, &w);
        let f = |x: f64| oracle_phi(&curve, x) - ratio * value * x;
        let (mut best_x, mut best_f) = (0.0, f(0.0));
        for i in 1..=10_000 {
            let x = i as f64 * 1e-4;
            let fx = f(x);
            if fx < best_f {
                best_x = x;
                best_f = fx;
            }
        }
        let dd = (d - best_x).abs();
        // The analytic point may not lose to the grid; it may beat the grid by
        // at most the grid's own discretization error, half a step of curvature.
        let dobj = f(d) - best_f;
        let x_hi = (d + 5e-5).min(1.0);
        let curvature = curve.a1 * curve.a2.powi(2) / (LN_2 * (1.0 - curve.a2 * x_hi).powi(2));
        let resolution = 0.5 * curvature * 5e-5f64.powi(2) + 1e-12;
        worst_d = worst_d.max(dd);
        worst_obj = worst_obj.max(dobj);
        check(
            dd <= 1e-3 && dobj <= 1e-6 && -dobj <= resolution.max(1e-6),
            || format!("trial {trial}: d* {d} vs grid {best_x}, objective difference {dobj:.3e}"),
        )?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "max |d - grid| {worst_d:.2e}, max objective excess over grid {worst_obj:.2e}"
    ))
}

fn eoi_values(model: &ValueModel) -> Result<Vec<(String, f64)>, String> {
    let mut out: Vec<(String, f64)> = [EventKind::HardBraking, EventKind::Conflict, EventKind::Crash]
        .into_iter()
        .map(|k| (k.to_string(), model.frame_value(&EventLabel::of(k)).unwrap()))
        .collect();
    for range in [8.0, 12.0, 20.0, 30.0, 50.0, 80.0] {
        let v = model
            .frame_value(&EventLabel::cutin(range))
            .map_err(|e| e.to_string())?;
        out.push((format!("cutin@{range}m"), v));
    }
    Ok(out)
}

fn boundary_behavior() -> Outcome {
    let curve = QualityRatioCurve::default();
    let model = ValueModel::reference();
    let values = eoi_values(&model)?;
    for (name, v) in &values {
        let b = boundary_ratio(*v, &curve);
        let at = solve_decoupled(
            *v,
            1.0,
            &curve,
            &LboWeights::new(1.0, b).map_err(|e| e.to_string())?,
        );
        check(at == 0.0, || format!("{name}: d* {at} at the boundary {b}"))?;
        let above = solve_decoupled(
            *v,
            1.0,
            &curve,
            &LboWeights::new(1.0, b * 1.01).map_err(|e| e.to_string())?,
        );
        check(above > 0.0, || {
            format!("{name}: d* {above} just above the boundary {b}")
        })?;
    }
    Ok(format!("{} event values", values.len()))
}

fn coupled_bound() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0c);
    let curve = QualityRatioCurve::default();
    let opts = SolverOptions::default();
    let levels = [0.009, 0.37, 0.5, 0.72, 1.0];
    let (mut worst_kkt, mut worst_gap) = (0.0f64, f64::NEG_INFINITY);
    for trial in 0..100 {
        let n = rng.random_range(20..=100);
        let values: Vec<f64> = (0..n)
            .map(|_| levels[rng.random_range(0..levels.len())])
            .collect();
        let sizes: Vec<u64> = (0..n).map(|_| rng.random_range(40_000..120_000)).collect();
        let costs = relative_costs(&sizes);
        let w = LboWeights::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0))
            .map_err(|e| e.to_string())?;
        let sol = solve_coupled(&values, &costs, &curve, &w, &opts).map_err(|e| e.to_string())?;
        let dec = solve_decoupled_buffer(&values, &costs, &curve, &w);
        let dec_obj = objective(&dec, &values, &costs, &curve, &w);
        let obj = objective(&sol.d, &values, &costs, &curve, &w);
        let kkt = kkt_residual(&sol.d, &gradient(&sol.d, &values, &costs, &curve, &w));
        worst_kkt = worst_kkt.max(kkt);
        worst_gap = worst_gap.max(obj - dec_obj);
        check(obj <= dec_obj + 1e-9, || {
            format!("trial {trial}: coupled {obj} exceeds decoupled {dec_obj}")
        })?;
        check(kkt <= 1e-6, || format!("trial {trial}: KKT residual {kkt:.3e}"))?;
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "max KKT {worst_kkt:.2e}, max coupled minus decoupled objective {worst_gap:.2e}"
    ))
}

fn dmm_conservation() -> Outcome {
    let cfg = PipelineConfig::default();
    let recorder = Recorder::from_config(&cfg).map_err(|e| e.to_string())?;
    let tc: TrackerConfig = recorder.tracker.clone();
    let normal = recorder.model.normal_value();
    let mut buffers = 0usize;
    let mut terminations = 0usize;
    for seed in 0..50u64 {
        let traj = trafficgen::generate(&sim(seed, 180.0), &cfg.geometry).map_err(|e| e.to_string())?;
        let geo = sim(seed, 180.0).geometry(&cfg.geometry);
        let mut tracker: Tracker<u64> = Tracker::new(tc.clone(), normal).map_err(|e| e.to_string())?;
        let mut emitted: Vec<(Vec<u64>, Option<sbb_core::tracker::Termination>)> = Vec::new();
        let mut prev = None;
        for f in &traj.frames {
            let label = detect(f, prev, &geo);
            let frame = TrackedFrame {
                frame_index: f.frame_index,
                value: recorder.model.frame_value(&label).map_err(|e| e.to_string())?,
                features: build_feature_vector(f, &recorder.norm).map_err(|e| e.to_string())?,
                data: f.frame_index,
            };
            if let Some(b) = tracker.push(frame).map_err(|e| e.to_string())? {
                emitted.push((b.frames.iter().map(|t| t.data).collect(), b.termination));
            }
            let (_, maj, wait) = tracker.buffer_lens();
            check(maj <= tc.t_maj && wait <= tc.t_wait, || {
                format!("seed {seed} frame {}: |maj| {maj}, |wait| {wait}", f.frame_index)
            })?;
            prev = Some(f);
        }
        if let Some(b) = tracker.finish() {
            emitted.push((b.frames.iter().map(|t| t.data).collect(), b.termination));
        }
        let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
        for (frames, _) in &emitted {
            for i in frames {
                *seen.entry(*i).or_default() += 1;
            }
        }
        for f in &traj.frames {
            let n = seen.get(&f.frame_index).copied().unwrap_or(0);
            check((1..=2).contains(&n), || {
                format!("seed {seed}: frame {} emitted {n} times", f.frame_index)
            })?;
        }
        check(seen.len() == traj.frames.len(), || {
            format!("seed {seed}: unknown frames emitted")
        })?;
        for (k, (frames, term)) in emitted.iter().enumerate() {
            let Some(t) = term else { continue };
            terminations += 1;
            let held = t.maj_len + t.wait_len;
            let expect = tc.min_pre.max(held.saturating_sub(tc.t_maj)).min(held);
            check(t.carried == expect && frames.len() == held - expect, || {
                format!(
                    "seed {seed} buffer {k}: held {held}, carried {}, emitted {}",
                    t.carried,
                    frames.len()
                )
            })?;
            // The carried precursor opens the next buffer.
            if let Some((next, _)) = emitted.get(k + 1) {
                let last = *frames.last().unwrap();
                check(t.carried == 0 || next.first() == Some(&(last + 1)), || {
                    format!("seed {seed} buffer {k}: precursor does not follow frame {last}")
                })?;
            }
        }
        buffers += emitted.len();
    }
    Ok(format!(
        "50 trajectories, {buffers} buffers, {terminations} terminations"
    ))
}

fn eviction_exhaustive() -> Outcome {
    let start = Instant::now();
    const OPTIONS: [(f64, u64); 9] = [
        (0.0, 1),
        (0.0, 2),
        (0.0, 3),
        (1.0, 1),
        (1.0, 2),
        (1.0, 3),
        (2.0, 1),
        (2.0, 2),
        (2.0, 3),
    ];
    let budget = 5u64;
    let mut sequences = 0u64;
    for len in 1..=6u32 {
        for code in 0..9u64.pow(len) {
            sequences += 1;
            let mut c = code;
            let seq: Vec<(f64, u64)> = (0..len)
                .map(|_| {
                    let o = OPTIONS[(c % 9) as usize];
                    c /= 9;
                    o
                })
                .collect();
            let mut pq = EvictionQueue::new(Policy::Prioritized, Some(budget));
            let mut fifo = EvictionQueue::new(Policy::Fifo, Some(budget));
            for (id, &(v, size)) in seq.iter().enumerate() {
                let id = id as u64;
                let key = |i: u64| PriorityKey {
                    vstar: seq[i as usize].0,
                    id: i,
                };
                let a = pq.push(id, v, size);
                let kept = pq.eviction_order();
                for e in &a.evicted {
                    check(kept.iter().all(|k| key(*k) > key(*e)), || {
                        format!("{seq:?}: evicted {e} while keeping {kept:?}")
                    })?;
                }
                let total: u64 = kept.iter().map(|k| seq[*k as usize].1).sum();
                check(total <= budget || kept.len() == 1, || {
                    format!("{seq:?}: over budget")
                })?;
                if let Some(last) = a.evicted.last() {
                    check(total + seq[*last as usize].1 > budget, || {
                        format!("{seq:?}: evicted {last} needlessly")
                    })?;
                }

                fifo.push(id, v, size);
                let sizes: Vec<u64> = seq[..=id as usize].iter().map(|s| s.1).collect();
                let first = (0..sizes.len())
                    .find(|s| sizes[*s..].iter().sum::<u64>() <= budget)
                    .unwrap_or(sizes.len() - 1);
                let suffix: Vec<u64> = (first as u64..=id).collect();
                check(fifo.eviction_order() == suffix, || {
                    format!(
                        "{seq:?}: fifo keeps {:?}, expected {suffix:?}",
                        fifo.eviction_order()
                    )
                })?;
            }
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{sequences} push sequences"))
}

fn quality_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig {
        source: SourceConfig::Generator(sim(0, 1800.0)),
        ..PipelineConfig::default()
    };
    let recorder = Recorder::from_config(&cfg).map_err(|e| e.to_string())?;
    let traj = pipeline::load_source(&cfg).map_err(|e| e.to_string())?;
    let store = Store::in_memory(StorageConfig {
        budget: None,
        ..cfg.storage
    })
    .map_err(|e| e.to_string())?;
    let rec = recorder.record(&traj.frames, store).map_err(|e| e.to_string())?;
    let r = &rec.report;
    let s = |k| r.event(k);
    let (n, c, h, x) = (
        s(EventKind::Normal),
        s(EventKind::Cutin),
        s(EventKind::HardBraking),
        s(EventKind::Conflict),
    );
    let summary = format!(
        "mean d normal {:.3} cutin {:.3} hardbraking {:.3} conflict {:.3}; std normal {:.3}",
        n.mean_quality, c.mean_quality, h.mean_quality, x.mean_quality, n.std_quality
    );
    check(c.frames > 0 && h.frames > 0 && x.frames > 0, || {
        format!("missing event kinds: {summary}")
    })?;
    check(x.mean_quality > h.mean_quality, || {
        format!("conflict not above hardbraking: {summary}")
    })?;
    check((h.mean_quality - c.mean_quality).abs() <= 0.1, || {
        format!("hardbraking and cutin differ by more than 0.1: {summary}")
    })?;
    check(h.mean_quality.min(c.mean_quality) > n.mean_quality, || {
        format!("normal not lowest: {summary}")
    })?;
    for e in [c, h, x] {
        check(e.mean_quality >= 0.6, || {
            format!("{} mean below 0.6: {summary}", e.kind)
        })?;
        check(e.std_quality < n.std_quality, || {
            format!("{} spread not below normal: {summary}", e.kind)
        })?;
    }
    check(n.mean_quality <= 0.55, || {
        format!("normal mean above 0.55: {summary}")
    })?;
    within(start.elapsed(), 300.0)?;
    Ok(summary)
}

/// Quiet traffic with conflicts, hard braking and cut-ins injected into the first fifth.
fn front_loaded(seed: u64) -> Result<(PipelineConfig, sbb_core::trajectory::Trajectory), String> {
    let quiet = SimConfig {
        seed,
        duration: 600.0,
        merge_rate: 0.0,
        braking_rate: 0.0,
        lane_change_rate: 0.0,
        ..SimConfig::default()
    };
    let cfg = PipelineConfig {
        source: SourceConfig::Generator(quiet.clone()),
        ..PipelineConfig::default()
    };
    let geo = cfg.effective_geometry();
    let mut traj = trafficgen::generate(&quiet, &cfg.geometry).map_err(|e| e.to_string())?;
    let span = traj.frames.len() / 5;
    for (k, at) in (60..span).step_by(90).enumerate() {
        let event = match k % 3 {
            0 => EventLabel::of(EventKind::Conflict),
            1 => EventLabel::of(EventKind::HardBraking),
            _ => EventLabel::cutin(30.0),
        };
        inject_event(&mut traj, event, at, &geo).map_err(|e| e.to_string())?;
    }
    Ok((cfg, traj))
}

fn retention_under_budget() -> Outcome {
    let start = Instant::now();
    let (cfg, traj) = front_loaded(11)?;
    let recorder = Recorder::from_config(&cfg).map_err(|e| e.to_string())?;
    let seg = recorder.segment(&traj.frames).map_err(|e| e.to_string())?;
    let truth = seg.truth();
    let conflicts = truth.iter().filter(|k| **k == EventKind::Conflict).count();
    check(conflicts > 0, || "no conflict frames".into())?;
    let full = recorder
        .replay(
            &seg,
            StorageConfig {
                budget: None,
                ..cfg.storage
            },
        )
        .map_err(|e| e.to_string())?;
    let total: u64 = full.iter().map(|f| f.bytes).sum();
    let budget = (0.3 * total as f64).round() as u64;
    let policies = [Policy::Prioritized, Policy::Fifo];
    let limited = recorder
        .compare(&seg, Some(budget), &policies, cfg.storage.lambda)
        .map_err(|e| e.to_string())?;
    let unlimited = recorder
        .compare(&seg, None, &policies, cfg.storage.lambda)
        .map_err(|e| e.to_string())?;
    let share = |c: &sbb_core::pipeline::Comparison, p: &str| {
        c.table.row(p).unwrap().count(EventKind::Conflict) as f64 / conflicts as f64
    };
    let (pq, ff) = (share(&limited, "prioritized"), share(&limited, "fifo"));
    let summary = format!(
        "{conflicts} conflict frames, budget {budget} of {total} bytes: prioritized {:.0}%, fifo {:.0}%",
        pq * 100.0,
        ff * 100.0
    );
    check(pq >= 0.95, || {
        format!("prioritized retains too little: {summary}")
    })?;
    check(ff < 0.5, || format!("fifo retains too much: {summary}"))?;
    for p in ["prioritized", "fifo"] {
        let row = unlimited.table.row(p).unwrap();
        for k in EventKind::ALL {
            let want = truth.iter().filter(|t| **t == k).count();
            check(row.count(k) == want, || {
                format!("{p} unlimited keeps {} of {want} {k} frames", row.count(k))
            })?;
        }
    }
    within(start.elapsed(), 300.0)?;
    Ok(summary)
}

fn sweep_pattern() -> Outcome {
    let cfg = PipelineConfig {
        source: SourceConfig::Generator(sim(0, 600.0)),
        ..PipelineConfig::default()
    };
    let recorder = Recorder::from_config(&cfg).map_err(|e| e.to_string())?;
    let traj = pipeline::load_source(&cfg).map_err(|e| e.to_string())?;
    let seg = recorder.segment(&traj.frames).map_err(|e| e.to_string())?;
    let curve = recorder.lbo.curve;
    let eoi: Vec<f64> = seg
        .segments
        .iter()
        .flat_map(|s| &s.frames)
        .filter(|f| f.label.is_eoi())
        .map(|f| f.value)
        .collect();
    check(!eoi.is_empty(), || "no events in the trajectory".into())?;
    let bounds: Vec<f64> = eoi.iter().map(|v| boundary_ratio(*v, &curve)).collect();
    let lo = bounds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = bounds.iter().copied().fold(0.0, f64::max);

    let below: Vec<f64> = (1..=9).map(|i| lo * i as f64 / 10.0).collect();
    let rows = recorder
        .sweep(&seg, &weight_grid(&[1.0], &below))
        .map_err(|e| e.to_string())?;
    let avpf_below = rows.iter().map(|r| r.avpf).fold(0.0, f64::max);

    let above: Vec<f64> = (0..=24).map(|i| hi * 1.05 * 1.2f64.powi(i)).collect();
    let rows = recorder
        .sweep(&seg, &weight_grid(&[1.0], &above))
        .map_err(|e| e.to_string())?;
    let vpm: Vec<f64> = rows.iter().map(|r| r.vpm.unwrap_or(f64::NAN)).collect();
    let rising = vpm
        .windows(2)
        .zip(&above)
        .find(|(w, _)| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less))
        .map(|(w, r)| (*r, w[0], w[1]));
    let peak = rows
        .iter()
        .max_by(|a, b| a.vpm.unwrap_or(0.0).total_cmp(&b.vpm.unwrap_or(0.0)))
        .unwrap();
    let summary = format!(
        "EOI boundaries [{lo:.3}, {hi:.3}], max aVPF below {avpf_below:.2e}, VPM peak at zeta/eta {:.3}",
        peak.zeta
    );
    check(avpf_below <= 1e-6, || {
        format!("aVPF not near zero below the boundaries: {summary}")
    })?;
    if let Some((r, a, b)) = rising {
        return Err(format!(
            "VPM not strictly decreasing: {a:.4e} -> {b:.4e} after zeta/eta {r:.3}; {summary}"
        ));
    }
    Ok(summary)
}

fn fit_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf17);
    let exp = Exp::new(25.0).unwrap();
    let samples: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
    let fit = fit_range_model(&samples).map_err(|e| e.to_string())?;
    check(fit.family() == Family::Exponential, || {
        format!("exponential draws fit as {:?}", fit.family())
    })?;

    let (d1, d2, scale) = (10.0, 20.0, 0.02);
    let f = FisherF::new(d1, d2).unwrap();
    let samples: Vec<f64> = (0..10_000).map(|_| scale * f.sample(&mut rng)).collect();
    let fit = fit_range_model(&samples).map_err(|e| e.to_string())?;
    check(fit.family() == Family::F, || {
        format!("F draws fit as {:?}", fit.family())
    })?;
    let p = &fit.dist.params;
    for (got, want) in p.iter().zip([d1, d2, scale]) {
        check(((got - want) / want).abs() <= 0.1, || {
            format!("F parameters {p:?}, expected [{d1}, {d2}, {scale}]")
        })?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("F parameters [{:.3}, {:.3}, {:.5}]", p[0], p[1], p[2]))
}

fn determinism() -> Outcome {
    let cfg = PipelineConfig {
        source: SourceConfig::Generator(sim(5, 120.0)),
        storage: StorageConfig {
            budget: Some(2_000_000),
            ..StorageConfig::default()
        },
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let read_all = |d: &std::path::Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut out = vec![(
            "manifest.log".to_string(),
            std::fs::read(d.join("manifest.log")).map_err(|e| e.to_string())?,
        )];
        let mut names: Vec<_> = std::fs::read_dir(d.join("buffers"))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for n in names {
            out.push((
                n.clone(),
                std::fs::read(d.join("buffers").join(&n)).map_err(|e| e.to_string())?,
            ));
        }
        Ok(out)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline::run_record(&cfg, &a).map_err(|e| e.to_string())?;
    pipeline::run_record(&cfg, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_all(&a)?, read_all(&b)?);
    check(fa == fb, || "recordings differ".into())?;
    Ok(format!("manifest and {} buffer files identical", fa.len() - 1))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("value table", value_table),
        ("decoupled optimum vs grid search", decoupled_oracle),
        ("boundary behavior", boundary_behavior),
        ("coupled vs decoupled bound", coupled_bound),
        ("segmentation conservation", dmm_conservation),
        ("eviction correctness", eviction_exhaustive),
        ("quality ordering", quality_ordering),
        ("retention under budget", retention_under_budget),
        ("weight sweep pattern", sweep_pattern),
        ("range model recovery", fit_recovery),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
