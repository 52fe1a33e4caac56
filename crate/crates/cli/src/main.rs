//! `sbb`: generate traffic, fit valuation and compression models, record,
//! sweep and compare storage policies.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use sbb_core::compressor::{self, procedural_corpus, sample_curve};
use sbb_core::config::{LboMode, PipelineConfig, SourceConfig};
use sbb_core::domain::{FrameRecord, NormBounds, Payload};
use sbb_core::events::{label_trajectory, EventKind};
use sbb_core::lbo::fit_quality_ratio;
use sbb_core::metrics::{compute_report, RecordedFrame};
use sbb_core::pipeline::{self, load_source, sweep_tsv, weight_grid, Recorder};
use sbb_core::storage::{self, Policy, StorageConfig};
use sbb_core::trafficgen::{self, SimConfig};
use sbb_core::trajectory;
use sbb_core::value::{
    estimate_priors_with_crash, fit_range_model, ModelFile, PriorCounts, ValueModel, DEFAULT_CRASH_PRIOR,
};

#[derive(Parser)]
#[command(name = "sbb", version, about = "Value-driven event data recorder")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a traffic trajectory.
    Gen(GenArgs),
    /// Estimate event priors, the cut-in range model and normalization bounds.
    FitPriors(FitPriorsArgs),
    /// Fit the quality-to-size curve on an image corpus.
    FitCurve(FitCurveArgs),
    /// Record a trajectory into a store directory.
    Record(RecordArgs),
    /// Sweep the optimization weights with unlimited storage.
    Sweep(SweepArgs),
    /// Compare eviction policies under storage budgets.
    Compare(CompareArgs),
    /// Recompute the report of an existing store.
    Report(ReportArgs),
    /// Rewrite a store manifest keeping only live buffers.
    CompactManifest(CompactArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArg {
    /// Configuration document (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
}

/// Overrides applied on top of the configuration document.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Read frames from this trajectory file instead of the configured source.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Generator duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Valuation model file.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Use the coupled optimizer instead of the per-frame closed form.
    #[arg(long)]
    coupled: bool,
    /// Disable spreading event values onto neighboring frames.
    #[arg(long)]
    no_filter: bool,
    /// Storage budget in bytes, or `unlimited`.
    #[arg(long, value_parser = parse_budget)]
    budget: Option<Budget>,
    /// Eviction policy: prioritized or fifo.
    #[arg(long)]
    policy: Option<Policy>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    participants: Option<usize>,
    /// Multiply the braking-impulse rate.
    #[arg(long)]
    braking_scale: Option<f64>,
    /// Render a procedural image per frame into this directory and reference it.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output trajectory file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitPriorsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Trajectory files; when none are given, `--seeds` trajectories are generated.
    trajectories: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    base_seed: u64,
    /// Use the default crash prior when the corpus has no crash.
    #[arg(long)]
    default_crash_prior: bool,
    /// Keep the published cut-in range model instead of fitting one.
    #[arg(long)]
    reference_range_model: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitCurveArgs {
    /// Directory of images (PNG or JPEG); the procedural corpus when absent.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Procedural corpus size.
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Write the fitted curve as JSON here.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    overrides: Overrides,
    /// Store directory; must not already hold a manifest.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated eta values.
    #[arg(long, value_delimiter = ',', default_values_t = grid_default())]
    etas: Vec<f64>,
    /// Comma-separated zeta values.
    #[arg(long, value_delimiter = ',', default_values_t = grid_default())]
    zetas: Vec<f64>,
    /// Sweep zeta/eta ratios at eta = 1 instead of the eta x zeta grid.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Output table (tab-separated); the resolved configuration is written beside it.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated budgets in bytes or `unlimited`.
    #[arg(long, value_delimiter = ',', value_parser = parse_budget)]
    budgets: Vec<Budget>,
    /// Comma-separated budgets as fractions of the unlimited recording size.
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Store directory.
    #[arg(long)]
    store: PathBuf,
    /// Source trajectory for ground-truth event positions.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompactArgs {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Budget(Option<u64>);

fn parse_budget(s: &str) -> Result<Budget, String> {
    if s == "unlimited" {
        return Ok(Budget(None));
    }
    s.parse::<u64>()
        .map(|b| Budget(Some(b)))
        .map_err(|_| format!("`{s}` is neither a byte count nor `unlimited`"))
}

fn grid_default() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

/// An error in the configuration or command line rather than the data.
#[derive(Debug)]
struct ConfigFailure(String);

impl fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn config_failure(msg: impl fmt::Display) -> anyhow::Error {
    ConfigFailure(msg.to_string()).into()
}

/// A configuration failure carrying the whole cause chain in its message.
fn config_error(e: &dyn std::error::Error) -> anyhow::Error {
    let mut msg = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        msg.push_str(": ");
        msg.push_str(&c.to_string());
        cause = c.source();
    }
    config_failure(msg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigFailure>().is_some() {
        return 2;
    }
    match err.downcast_ref::<sbb_core::Error>().map(|e| e.root()) {
        Some(sbb_core::Error::Config(_)) => 2,
        _ => 3,
    }
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    match &arg.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| config_error(&e)),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply(cfg: &mut PipelineConfig, o: &Overrides) {
    if let Some(p) = &o.trajectory {
        cfg.source = SourceConfig::File { path: p.clone() };
    }
    if let SourceConfig::Generator(sim) = &mut cfg.source {
        if let Some(s) = o.seed {
            sim.seed = s;
        }
        if let Some(d) = o.duration {
            sim.duration = d;
        }
    }
    if let Some(m) = &o.model {
        cfg.model = Some(m.clone());
    }
    if let Some(e) = o.eta {
        cfg.lbo.eta = e;
    }
    if let Some(z) = o.zeta {
        cfg.lbo.zeta = z;
    }
    if o.coupled {
        cfg.lbo.mode = LboMode::Coupled;
    }
    if o.no_filter {
        cfg.value.filter = false;
    }
    if let Some(b) = o.budget {
        cfg.storage.budget = b.0;
    }
    if let Some(p) = o.policy {
        cfg.storage.policy = p;
    }
}

fn resolved(arg: &ConfigArg, o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = load_config(arg)?;
    apply(&mut cfg, o);
    cfg.validate().map_err(|e| config_error(&e))?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let mut sim = match cfg.source {
        SourceConfig::Generator(s) => s,
        SourceConfig::File { .. } => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(d) = a.duration {
        sim.duration = d;
    }
    if let Some(n) = a.participants {
        sim.n_participants = n;
    }
    if let Some(k) = a.braking_scale {
        sim.braking_rate *= k;
    }
    sim.validate().map_err(|e| config_error(&e))?;
    let mut traj = trafficgen::generate(&sim, &cfg.geometry)?;
    if let Some(dir) = &a.images {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let rendered: Vec<Result<(PathBuf, u64)>> = traj
            .frames
            .par_iter()
            .map(|f| {
                let img = compressor::road_scene(
                    sim.seed.wrapping_mul(1_000_003).wrapping_add(f.frame_index),
                    compressor::SCENE_WIDTH,
                    compressor::SCENE_HEIGHT,
                );
                let name = PathBuf::from(format!("{:06}.png", f.frame_index));
                let path = dir.join(&name);
                img.save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
                Ok((path, compressor::raw_rgb_size(&img)))
            })
            .collect();
        for (f, r) in traj.frames.iter_mut().zip(rendered) {
            let (path, size) = r?;
            f.payload = Payload::Image { path };
            f.raw_size = size;
        }
    }
    ensure_parent(&a.out)?;
    trajectory::save(&a.out, traj.header.as_ref(), &traj.frames)?;
    println!("{} frames written to {}", traj.frames.len(), a.out.display());
    Ok(())
}

fn cmd_fit_priors(a: FitPriorsArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let geo = cfg.effective_geometry();
    let trajectories: Vec<Vec<FrameRecord>> = if a.trajectories.is_empty() {
        let sim = match &cfg.source {
            SourceConfig::Generator(s) => s.clone(),
            SourceConfig::File { .. } => SimConfig::default(),
        };
        (0..a.seeds)
            .into_par_iter()
            .map(|i| {
                let s = SimConfig {
                    seed: a.base_seed + i,
                    ..sim.clone()
                };
                trafficgen::generate(&s, &cfg.geometry).map(|t| t.frames)
            })
            .collect::<sbb_core::Result<_>>()?
    } else {
        a.trajectories
            .iter()
            .map(|p| trajectory::load(p, &geo).map(|t| t.frames))
            .collect::<sbb_core::Result<_>>()?
    };
    let mut counts = PriorCounts::default();
    let mut inverse_ranges = Vec::new();
    for frames in &trajectories {
        let labels = label_trajectory(frames, &geo);
        counts.add_labels(&labels);
        inverse_ranges.extend(
            labels
                .iter()
                .filter(|l| l.kind == EventKind::Cutin)
                .filter_map(|l| l.range)
                .filter(|r| *r > 0.0)
                .map(|r| 1.0 / r),
        );
    }
    let crash = a.default_crash_prior.then_some(DEFAULT_CRASH_PRIOR);
    let priors = estimate_priors_with_crash(&counts, crash)?;
    let range_model = if a.reference_range_model {
        ValueModel::reference().range_model
    } else {
        fit_range_model(&inverse_ranges)?
    };
    let norm = NormBounds::from_corpus(trajectories.iter().flatten())?;
    let model = ValueModel { priors, range_model };
    let provenance = format!(
        "{} trajectories, {} frames, {} cut-in samples",
        trajectories.len(),
        counts.total_frames,
        inverse_ranges.len()
    );
    let file = ModelFile::new(&model, norm, provenance);
    ensure_parent(&a.out)?;
    file.save(&a.out)?;
    for k in EventKind::ALL {
        println!(
            "{k}\tcount {}\tprior {:.6e}",
            counts.counts[k.index()],
            model.priors.prob(k)
        );
    }
    println!(
        "range model {} {:?}",
        model.range_model.family(),
        model.range_model.dist.params
    );
    Ok(())
}

fn load_images(dir: &Path) -> Result<Vec<image::RgbImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            image::open(p)
                .map(|i| i.to_rgb8())
                .with_context(|| format!("decoding {}", p.display()))
        })
        .collect()
}

fn cmd_fit_curve(a: FitCurveArgs) -> Result<()> {
    let corpus = match &a.images {
        Some(dir) => load_images(dir)?,
        None => procedural_corpus(a.count, a.base_seed),
    };
    let samples = sample_curve(&corpus, &compressor::default_qualities())?;
    let fit = fit_quality_ratio(&samples)?;
    println!(
        "a1 {:.5}\ta2 {:.5}\ta3 {:.5}\trms {:.5}\tsamples {}",
        fit.curve.a1, fit.curve.a2, fit.curve.a3, fit.rms, fit.n
    );
    if let Some(out) = &a.out {
        write(out, &serde_json::to_string_pretty(&fit.curve)?)?;
    }
    Ok(())
}

fn cmd_record(a: RecordArgs) -> Result<()> {
    let cfg = resolved(&a.config, &a.overrides)?;
    let report = pipeline::run_record(&cfg, &a.out)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = resolved(&a.config, &a.overrides)?;
    let recorder = Recorder::from_config(&cfg)?;
    let traj = load_source(&cfg)?;
    let seg = recorder.segment(&traj.frames)?;
    let grid = match &a.ratios {
        Some(r) => weight_grid(&[1.0], r),
        None => weight_grid(&a.etas, &a.zetas),
    };
    if grid.is_empty() {
        return Err(config_failure("sweep grid is empty"));
    }
    for w in &grid {
        w.validate().map_err(|e| config_error(&e))?;
    }
    info!(
        "sweeping {} grid points over {} buffers",
        grid.len(),
        seg.segments.len()
    );
    let rows = grid
        .par_iter()
        .map(|w| recorder.sweep_point(&seg, *w))
        .collect::<sbb_core::Result<Vec<_>>>()?;
    write(&a.out, &sweep_tsv(&rows))?;
    cfg.save(&a.out.with_extension("config.toml"))?;
    println!("{} rows written to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = resolved(&a.config, &a.overrides)?;
    let recorder = Recorder::from_config(&cfg)?;
    let traj = load_source(&cfg)?;
    let seg = recorder.segment(&traj.frames)?;
    let mut budgets: Vec<Option<u64>> = a.budgets.iter().map(|b| b.0).collect();
    if !a.fractions.is_empty() {
        let full = recorder.replay(
            &seg,
            StorageConfig {
                budget: None,
                ..cfg.storage
            },
        )?;
        let total: u64 = full.iter().map(|f| f.bytes).sum();
        for f in &a.fractions {
            if !f.is_finite() || *f <= 0.0 {
                return Err(config_failure(format!(
                    "budget fraction must be positive, got {f}"
                )));
            }
            budgets.push(Some(((total as f64) * f).round().max(1.0) as u64));
        }
    }
    if budgets.is_empty() {
        budgets.push(cfg.storage.budget);
    }
    let policies = [Policy::Prioritized, Policy::Fifo];
    let results = budgets
        .par_iter()
        .map(|b| recorder.compare(&seg, *b, &policies, cfg.storage.lambda))
        .collect::<sbb_core::Result<Vec<_>>>()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    cfg.save(&a.out.join("config.toml"))?;
    let mut all = String::new();
    for c in &results {
        let label = c.budget.map_or("unlimited".to_string(), |b| b.to_string());
        let table = c.table.to_tsv();
        write(&a.out.join(format!("capture_{label}.tsv")), &table)?;
        all.push_str(&format!("# budget {label}\n{table}\n"));
    }
    write(
        &a.out.join("compare.json"),
        &serde_json::to_string_pretty(&results)?,
    )?;
    print!("{all}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let (buffers, load) = storage::load(&a.store)?;
    if let Some(t) = &load.torn_tail {
        eprintln!("warning: skipped torn manifest record: {}", t.trim_end());
    }
    let mut frames: Vec<RecordedFrame> = buffers
        .iter()
        .flat_map(|b| b.frames.iter())
        .filter(|f| !f.released)
        .map(|f| RecordedFrame {
            frame_index: f.frame_index,
            label: f.label,
            value: f.value,
            quality: f.quality,
            bytes: f.bytes,
            raw_size: f.raw_size,
        })
        .collect();
    frames.sort_by_key(|f| f.frame_index);
    let eoi: Vec<u64> = match &a.trajectory {
        Some(p) => {
            let geo = cfg.effective_geometry();
            let t = trajectory::load(p, &geo)?;
            label_trajectory(&t.frames, &geo)
                .iter()
                .zip(&t.frames)
                .filter(|(l, _)| l.kind.is_eoi())
                .map(|(_, f)| f.frame_index)
                .collect()
        }
        None => frames
            .iter()
            .filter(|f| f.label.is_eoi())
            .map(|f| f.frame_index)
            .collect(),
    };
    let report = compute_report(&frames, &eoi);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("buffers\t{}\tevicted\t{}", load.live, load.evicted);
        print!("{}", report.to_tsv());
    }
    Ok(())
}

fn cmd_compact(a: CompactArgs) -> Result<()> {
    let r = storage::compact_manifest(&a.store)?;
    println!("kept {} live buffers, dropped {} evicted", r.live, r.evicted);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::FitPriors(a) => cmd_fit_priors(a),
        Command::FitCurve(a) => cmd_fit_curve(a),
        Command::Record(a) => cmd_record(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
        Command::CompactManifest(a) => cmd_compact(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
