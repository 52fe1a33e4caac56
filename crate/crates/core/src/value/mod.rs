//! Per-frame information value.
//!
//! Fixed-kind events are worth their self-information under the event priors,
//! normalized so a crash is worth exactly 1. Cut-ins are additionally weighted
//! by how unusual their range is under a fitted inverse-range model.

pub mod dist;
pub mod fit;

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::NormBounds;
use crate::error::{Error, Result};
use crate::events::{EventKind, EventLabel};
pub use dist::{Distribution, Family};
pub use fit::{fit_candidates, fit_range_model, CandidateFit, FittedRangeModel};

/// Crash prior used when none is estimated. Chosen so a conflict with prior
/// 0.0015 is worth 0.72.
pub const DEFAULT_CRASH_PRIOR: f64 = 1.19e-4;
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    Reference,
    Corpus,
    Loaded,
}

/// Event probabilities indexed by [`EventKind::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPriors {
    pub probs: [f64; 5],
    pub source: PriorSource,
}

impl EventPriors {
    pub fn new(probs: [f64; 5], source: PriorSource) -> Result<Self> {
        let p = Self { probs, source };
        p.validate()?;
        Ok(p)
    }

    /// Published reference priors with the default crash prior.
    pub fn reference() -> Self {
        Self {
            probs: [0.92, 0.045, 0.035, 0.0015, DEFAULT_CRASH_PRIOR],
            source: PriorSource::Reference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, p) in EventKind::ALL.iter().zip(self.probs) {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Input(format!(
                    "prior of {kind} must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn prob(&self, kind: EventKind) -> f64 {
        self.probs[kind.index()]
    }

    /// `-log2 Pr(crash)`.
    pub fn denominator(&self) -> f64 {
        -self.prob(EventKind::Crash).log2()
    }
}

/// Raw event counts. Crash frequencies are taken over host frames only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorCounts {
    pub counts: [u64; 5],
    pub total_frames: u64,
    pub host_frames: u64,
}

impl PriorCounts {
    /// Counts from host-perspective labels, where every frame is a host frame.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a EventLabel>) -> Self {
        let mut c = Self::default();
        c.add_labels(labels);
        c
    }

    pub fn add_labels<'a>(&mut self, labels: impl IntoIterator<Item = &'a EventLabel>) {
        for l in labels {
            self.counts[l.kind.index()] += 1;
            self.total_frames += 1;
            self.host_frames += 1;
        }
    }

    pub fn merge(&mut self, other: &PriorCounts) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.total_frames += other.total_frames;
        self.host_frames += other.host_frames;
    }
}

pub fn estimate_priors(counts: &PriorCounts) -> Result<EventPriors> {
    estimate_priors_with_crash(counts, None)
}

/// As [`estimate_priors`], but a corpus without crashes takes `crash_prior`
/// when one is given.
pub fn estimate_priors_with_crash(counts: &PriorCounts, crash_prior: Option<f64>) -> Result<EventPriors> {
    if counts.total_frames == 0 || counts.host_frames == 0 {
        return Err(Error::Input("empty corpus".into()));
    }
    let crash_missing = counts.counts[EventKind::Crash.index()] == 0;
    if let Some(kind) = EventKind::ALL
        .into_iter()
        .find(|k| counts.counts[k.index()] == 0 && !(*k == EventKind::Crash && crash_prior.is_some()))
    {
        return Err(Error::ZeroCount(kind.name()));
    }
    let mut probs = [0.0; 5];
    for kind in EventKind::ALL {
        let denom = match kind {
            EventKind::Crash => counts.host_frames,
            _ => counts.total_frames,
        };
        probs[kind.index()] = counts.counts[kind.index()] as f64 / denom as f64;
    }
    if let (true, Some(p)) = (crash_missing, crash_prior) {
        probs[EventKind::Crash.index()] = p;
    }
    let priors = EventPriors::new(probs, PriorSource::Corpus)?;
    let crash = priors.prob(EventKind::Crash);
    if EventKind::ALL[..4].iter().any(|k| priors.prob(*k) <= crash) {
        warn!("estimated crash prior {crash} is not the smallest");
    }
    Ok(priors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    /// Gaussian skirt deviation in frames.
    pub sigma_f: f64,
    /// Spread event values onto neighboring normal frames before optimization.
    pub filter: bool,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            sigma_f: 10.0,
            filter: true,
        }
    }
}

impl ValueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_f must be positive, got {}",
                self.sigma_f
            )));
        }
        Ok(())
    }
}

/// Value of an event whose worth depends only on its kind.
pub fn event_value(kind: EventKind, priors: &EventPriors) -> f64 {
    if kind == EventKind::Crash {
        return 1.0;
    }
    (-priors.prob(kind).log2() / priors.denominator()).clamp(0.0, 1.0)
}

/// Value of a cut-in at range `range` (m).
pub fn cutin_value(range: f64, model: &FittedRangeModel, priors: &EventPriors) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::Input(format!(
            "cut-in range must be positive, got {range}"
        )));
    }
    let tail = model.sf(1.0 / range) * priors.prob(EventKind::Cutin);
    if !(tail > 0.0) {
        warn!("cut-in tail mass underflows at range {range}; value clamped to 1");
        return Ok(1.0);
    }
    Ok((-tail.log2() / priors.denominator()).clamp(0.0, 1.0))
}

/// Inverse-range model matching the published cut-in values.
pub fn reference_range_model() -> FittedRangeModel {
    let dist = Distribution {
        family: Family::F,
        params: vec![10.0, 20.0, 0.0211],
    };
    FittedRangeModel {
        dist,
        log_likelihood: f64::NAN,
        bic: f64::NAN,
        n: 0,
    }
}

/// Everything needed to value a labeled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub priors: EventPriors,
    pub range_model: FittedRangeModel,
}

impl ValueModel {
    pub fn reference() -> Self {
        Self {
            priors: EventPriors::reference(),
            range_model: reference_range_model(),
        }
    }

    pub fn normal_value(&self) -> f64 {
        event_value(EventKind::Normal, &self.priors)
    }

    pub fn frame_value(&self, label: &EventLabel) -> Result<f64> {
        match (label.kind, label.range) {
            (EventKind::Cutin, Some(r)) => cutin_value(r, &self.range_model, &self.priors),
            (EventKind::Cutin, None) => Err(Error::Input("cut-in label without a range".into())),
            (kind, _) => Ok(event_value(kind, &self.priors)),
        }
    }
}

/// Maximal runs (inclusive index pairs) of values strictly above `threshold`.
pub fn event_intervals(values: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, v) in values.iter().enumerate() {
        match (start, *v > threshold) {
            (None, true) => start = Some(t),
            (Some(s), false) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, values.len() - 1));
    }
    out
}

/// Raise the frames outside `intervals` to the Gaussian skirts of the
/// interval endpoints. Frames inside any interval are left unchanged.
pub fn gaussian_filter_with(values: &[f64], intervals: &[(usize, usize)], sigma: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    if intervals.is_empty() {
        return out;
    }
    let mut inside = vec![false; values.len()];
    for &(a, b) in intervals {
        inside[a..=b].iter_mut().for_each(|x| *x = true);
    }
    for (t, slot) in out.iter_mut().enumerate() {
        if inside[t] {
            continue;
        }
        for &(a, b) in intervals {
            let (edge, dist) = if t < a {
                (a, (a - t) as f64)
            } else {
                (b, (t - b) as f64)
            };
            let skirt = values[edge] * (-(dist / sigma).powi(2)).exp();
            if skirt > *slot {
                *slot = skirt;
            }
        }
    }
    out
}

/// Single-pass filter with intervals taken from the raw values.
pub fn gaussian_filter(values: &[f64], normal_value: f64, sigma: f64) -> Vec<f64> {
    gaussian_filter_with(values, &event_intervals(values, normal_value), sigma)
}

/// On-disk valuation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub sbb_value_model: u32,
    pub priors: EventPriors,
    /// `-log2 Pr(crash)`, stored for inspection and checked on load.
    pub denominator: f64,
    pub range_model: Distribution,
    #[serde(default)]
    pub range_fit: Option<FitSummary>,
    pub norm_bounds: NormBounds,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub bic: f64,
    pub n: usize,
}

impl ModelFile {
    pub fn new(model: &ValueModel, norm_bounds: NormBounds, provenance: impl Into<String>) -> Self {
        let fit = &model.range_model;
        Self {
            sbb_value_model: MODEL_FILE_VERSION,
            denominator: model.priors.denominator(),
            priors: model.priors.clone(),
            range_model: fit.dist.clone(),
            range_fit: (fit.n > 0).then_some(FitSummary {
                log_likelihood: fit.log_likelihood,
                bic: fit.bic,
                n: fit.n,
            }),
            norm_bounds,
            provenance: provenance.into(),
        }
    }

    pub fn value_model(&self) -> ValueModel {
        let (log_likelihood, bic, n) = match &self.range_fit {
            Some(f) => (f.log_likelihood, f.bic, f.n),
            None => (f64::NAN, f64::NAN, 0),
        };
        ValueModel {
            priors: self.priors.clone(),
            range_model: FittedRangeModel {
                dist: self.range_model.clone(),
                log_likelihood,
                bic,
                n,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sbb_value_model != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file version {}",
                self.sbb_value_model
            )));
        }
        self.priors.validate()?;
        self.range_model.validate()?;
        self.norm_bounds.validate()?;
        let expect = self.priors.denominator();
        if (self.denominator - expect).abs() > 1e-9 * expect {
            return Err(Error::Config(format!(
                "stored denominator {} disagrees with priors ({expect})",
                self.denominator
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        m.validate()?;
        m.priors.source = PriorSource::Loaded;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GeometryConfig;
    use proptest::prelude::*;

    #[test]
    fn reference_event_values() {
        let p = EventPriors::reference();
        assert_eq!(event_value(EventKind::Crash, &p), 1.0);
        assert!((event_value(EventKind::Normal, &p) - 0.009).abs() <= 0.002);
        assert!((event_value(EventKind::HardBraking, &p) - 0.37).abs() <= 0.01);
        assert!((event_value(EventKind::Conflict, &p) - 0.72).abs() <= 0.001);
    }

    #[test]
    fn reference_cutin_values() {
        let m = ValueModel::reference();
        let v100 = m.frame_value(&EventLabel::cutin(100.0)).unwrap();
        let v30 = m.frame_value(&EventLabel::cutin(30.0)).unwrap();
        assert!((v100 - 0.34).abs() <= 0.05, "{v100}");
        assert!((v30 - 0.53).abs() <= 0.05, "{v30}");
        let limit = -m.priors.prob(EventKind::Cutin).log2() / m.priors.denominator();
        let far = m.frame_value(&EventLabel::cutin(1e9)).unwrap();
        assert!(far >= limit && far - limit < 1e-6);
    }

    #[test]
    fn cutin_rejects_non_positive_range() {
        let m = ValueModel::reference();
        assert!(m.frame_value(&EventLabel::cutin(0.0)).is_err());
        assert!(m.frame_value(&EventLabel::of(EventKind::Cutin)).is_err());
    }

    #[test]
    fn cutin_underflow_clamps_to_one() {
        let m = ValueModel::reference();
        assert_eq!(m.frame_value(&EventLabel::cutin(1e-6)).unwrap(), 1.0);
    }

    #[test]
    fn counting_priors() {
        let mut labels = vec![EventLabel::normal(); 92];
        labels.extend(vec![EventLabel::of(EventKind::HardBraking); 8]);
        let c = PriorCounts::from_labels(&labels);
        assert!(matches!(estimate_priors(&c), Err(Error::ZeroCount("cutin"))));
        let c = PriorCounts {
            counts: [92, 2, 8, 1, 1],
            total_frames: 100,
            host_frames: 50,
        };
        let p = estimate_priors(&c).unwrap();
        assert_eq!(p.prob(EventKind::Normal), 0.92);
        assert_eq!(p.prob(EventKind::HardBraking), 0.08);
        assert_eq!(p.prob(EventKind::Crash), 0.02);
        let c = PriorCounts {
            counts: [92, 2, 5, 1, 0],
            total_frames: 100,
            host_frames: 100,
        };
        assert!(matches!(estimate_priors(&c), Err(Error::ZeroCount("crash"))));
        let p = estimate_priors_with_crash(&c, Some(DEFAULT_CRASH_PRIOR)).unwrap();
        assert_eq!(p.prob(EventKind::Crash), DEFAULT_CRASH_PRIOR);
        assert_eq!(p.prob(EventKind::Cutin), 0.02);
    }

    #[test]
    fn filter_impulse() {
        let mut v = vec![0.009; 101];
        v[50] = 0.72;
        let f = gaussian_filter(&v, 0.00923, 10.0);
        assert!((f[60] - 0.72 * (-1f64).exp()).abs() < 1e-12);
        assert!((f[60] - 0.2649).abs() < 1e-4);
        assert_eq!(f[50], 0.72);
        assert_eq!(f[40], f[60]);
    }

    #[test]
    fn filter_leaves_interiors_alone() {
        // A lower plateau next to a higher one keeps its raw values.
        let v = [0.0, 0.5, 0.5, 0.0, 0.9, 0.0];
        let f = gaussian_filter(&v, 0.1, 5.0);
        assert_eq!(&f[1..3], &v[1..3]);
        assert_eq!(f[4], 0.9);
        assert!(f[3] > 0.8);
    }

    #[test]
    fn model_file_round_trip() {
        let model = ValueModel::reference();
        let bounds = NormBounds::from_geometry(&GeometryConfig::default(), 45.0);
        let file = ModelFile::new(&model, bounds, "reference");
        let back = ModelFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back.priors.probs, file.priors.probs);
        assert_eq!(back.priors.source, PriorSource::Loaded);
        assert_eq!(back.range_model, file.range_model);
        let mut bad = file.clone();
        bad.denominator += 1.0;
        assert!(matches!(
            ModelFile::from_json(&bad.to_json()),
            Err(Error::Config(_))
        ));
    }

    fn arb_priors() -> impl Strategy<Value = EventPriors> {
        proptest::array::uniform5(1e-6f64..0.999).prop_map(|probs| EventPriors {
            probs,
            source: PriorSource::Reference,
        })
    }

    proptest! {
        #[test]
        fn rarer_events_are_worth_more(mut priors in arb_priors(), a in 1e-6f64..0.999, b in 1e-6f64..0.999) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            priors.probs[EventKind::HardBraking.index()] = lo;
            let v_lo = event_value(EventKind::HardBraking, &priors);
            priors.probs[EventKind::HardBraking.index()] = hi;
            let v_hi = event_value(EventKind::HardBraking, &priors);
            prop_assert!(v_lo >= v_hi);
            prop_assert!((0.0..=1.0).contains(&v_lo));
        }

        #[test]
        fn cutin_value_nonincreasing(a in 0.5f64..500.0, b in 0.5f64..500.0) {
            let m = ValueModel::reference();
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            let vn = m.frame_value(&EventLabel::cutin(near)).unwrap();
            let vf = m.frame_value(&EventLabel::cutin(far)).unwrap();
            prop_assert!(vn >= vf);
            prop_assert!((0.0..=1.0).contains(&vf));
        }

        #[test]
        fn filter_dominates_raw(values in proptest::collection::vec(0.0f64..1.0, 1..200), sigma in 0.5f64..30.0) {
            let f = gaussian_filter(&values, 0.3, sigma);
            let intervals = event_intervals(&values, 0.3);
            for (t, (raw, out)) in values.iter().zip(&f).enumerate() {
                prop_assert!(out >= raw);
                prop_assert!(*out <= 1.0);
                let skirt = intervals.iter().map(|&(a, b)| {
                    let (edge, d) = if t < a { (a, a - t) } else if t > b { (b, t - b) } else { return 0.0 };
                    values[edge] * (-((d as f64) / sigma).powi(2)).exp()
                }).fold(0.0, f64::max);
                if skirt <= *raw {
                    prop_assert_eq!(out, raw);
                }
            }
        }
    }
}
