//! Mealy machine that segments the frame stream into local buffers.
//!
//! Each cycle starts in [`DmmState::Active`] with the precursor frames carried
//! over from the previous cycle and ends when the major buffer is full or the
//! wait buffer times out. The frame whose input ends a cycle is not consumed by
//! the terminating action; it is fed to the fresh cycle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::FeatureVector;
use crate::error::{Error, Result};
use crate::similarity::{similarity, BufferStats, DEFAULT_SIGMA_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmmState {
    Active,
    Buffering,
    Waiting,
    Terminate,
}

/// Input symbols `e1..e6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DmmInput {
    /// Dissimilar, normal.
    E1,
    /// Dissimilar, valuable.
    E2,
    /// Similar, normal.
    E3,
    /// Similar, valuable.
    E4,
    /// Major buffer full.
    E5,
    /// Wait buffer timed out.
    E6,
}

/// Output symbols `a1..a7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Precursor to major, frame to major.
    A1,
    /// Precursor to wait, frame to wait.
    A2,
    /// Frame to major.
    A3,
    /// Wait and frame to major.
    A4,
    /// Frame to wait.
    A5,
    /// Emit major, carry its tail.
    A6,
    /// Fill major from wait, emit it, carry the wait tail.
    A7,
}

impl fmt::Display for DmmInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", *self as u8 + 1)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", *self as u8 + 1)
    }
}

impl fmt::Display for DmmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DmmState::Active => "active",
            DmmState::Buffering => "buffering",
            DmmState::Waiting => "waiting",
            DmmState::Terminate => "terminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Major buffer capacity in frames.
    pub t_maj: usize,
    /// Wait buffer capacity in frames.
    pub t_wait: usize,
    /// Minimum precursor length carried between cycles.
    pub min_pre: usize,
    /// Similarity threshold in `(0, 1)`.
    pub xi_0: f64,
    pub sigma_floor: f64,
    /// Value threshold separating normal frames from events. Taken from the
    /// value model when unset.
    pub normal_value: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            t_maj: 600,
            t_wait: 30,
            min_pre: 20,
            xi_0: 0.5,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            normal_value: None,
        }
    }
}

impl TrackerConfig {
    /// `min_pre < t_wait <= t_maj` keeps every carried precursor plus one frame
    /// inside either buffer.
    pub fn validate(&self) -> Result<()> {
        if self.t_wait == 0 {
            return Err(Error::Config("t_wait must be at least 1".into()));
        }
        if self.min_pre >= self.t_wait {
            return Err(Error::Config(format!(
                "min_pre ({}) must be below t_wait ({})",
                self.min_pre, self.t_wait
            )));
        }
        if self.t_wait > self.t_maj {
            return Err(Error::Config(format!(
                "t_wait ({}) must not exceed t_maj ({})",
                self.t_wait, self.t_maj
            )));
        }
        if !(self.xi_0 > 0.0 && self.xi_0 < 1.0) {
            return Err(Error::Config(format!(
                "xi_0 must lie in (0, 1), got {}",
                self.xi_0
            )));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn classify_input(
    xi: f64,
    value: f64,
    wait_len: usize,
    maj_len: usize,
    cfg: &TrackerConfig,
    normal_value: f64,
) -> DmmInput {
    if maj_len >= cfg.t_maj {
        return DmmInput::E5;
    }
    if wait_len >= cfg.t_wait {
        return DmmInput::E6;
    }
    match (xi > cfg.xi_0, value > normal_value) {
        (false, false) => DmmInput::E1,
        (false, true) => DmmInput::E2,
        (true, false) => DmmInput::E3,
        (true, true) => DmmInput::E4,
    }
}

/// Action and next state for one input.
pub fn transition(state: DmmState, input: DmmInput) -> Result<(Action, DmmState)> {
    use DmmInput::*;
    use DmmState::*;
    Ok(match (state, input) {
        (Active, E2 | E4) => (Action::A1, Buffering),
        (Active, E1 | E3) => (Action::A2, Waiting),
        (Buffering, E2 | E3 | E4) => (Action::A3, Buffering),
        (Buffering, E1) => (Action::A5, Waiting),
        (Buffering, E5) => (Action::A6, Terminate),
        (Waiting, E1 | E3) => (Action::A5, Waiting),
        (Waiting, E2 | E4) => (Action::A4, Buffering),
        (Waiting, E6) => (Action::A7, Terminate),
        _ => {
            return Err(Error::Contract(format!(
                "input {input} cannot occur in state {state}"
            )))
        }
    })
}

/// Precursor length carried out of a terminating cycle.
pub fn carried_len(maj_len: usize, wait_len: usize, cfg: &TrackerConfig) -> usize {
    let overflow = (maj_len + wait_len).saturating_sub(cfg.t_maj);
    cfg.min_pre.max(overflow).min(maj_len + wait_len)
}

/// Split `maj ++ wait` into the emitted buffer and the carried precursor.
pub fn finalize<T>(maj: Vec<T>, wait: Vec<T>, cfg: &TrackerConfig) -> (Vec<T>, Vec<T>) {
    let carry = carried_len(maj.len(), wait.len(), cfg);
    let mut all = maj;
    all.extend(wait);
    let tail = all.split_off(all.len() - carry);
    (all, tail)
}

/// A frame as seen by the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame<T> {
    pub frame_index: u64,
    pub value: f64,
    pub features: FeatureVector,
    pub data: T,
}

/// Bookkeeping for a cycle that ended through its terminating action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Termination {
    pub action: Action,
    pub maj_len: usize,
    pub wait_len: usize,
    pub carried: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedBuffer<T> {
    pub frames: Vec<TrackedFrame<T>>,
    /// `None` for the end-of-stream flush.
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub frame_index: u64,
    pub xi: f64,
    pub value: f64,
    pub input: DmmInput,
    pub state: DmmState,
    pub action: Action,
    pub next: DmmState,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6} {:.6} {} {} {} {}",
            self.frame_index, self.xi, self.value, self.input, self.state, self.action, self.next
        )
    }
}

pub struct Tracker<T> {
    cfg: TrackerConfig,
    normal_value: f64,
    state: DmmState,
    pre: Vec<TrackedFrame<T>>,
    maj: Vec<TrackedFrame<T>>,
    wait: Vec<TrackedFrame<T>>,
    pre_stats: BufferStats,
    maj_stats: BufferStats,
    wait_stats: BufferStats,
    trace: Option<Vec<TraceEntry>>,
}

impl<T> Tracker<T> {
    pub fn new(cfg: TrackerConfig, normal_value: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            normal_value,
            state: DmmState::Active,
            pre: Vec::new(),
            maj: Vec::new(),
            wait: Vec::new(),
            pre_stats: BufferStats::default(),
            maj_stats: BufferStats::default(),
            wait_stats: BufferStats::default(),
            trace: None,
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn state(&self) -> DmmState {
        self.state
    }

    /// `(|B_pre|, |B_maj|, |B_wait|)`.
    pub fn buffer_lens(&self) -> (usize, usize, usize) {
        (self.pre.len(), self.maj.len(), self.wait.len())
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn reference_stats(&self) -> &BufferStats {
        if !self.maj_stats.is_empty() {
            &self.maj_stats
        } else if !self.wait_stats.is_empty() {
            &self.wait_stats
        } else {
            &self.pre_stats
        }
    }

    /// Feed one frame; returns the buffer emitted if a cycle ended.
    pub fn push(&mut self, frame: TrackedFrame<T>) -> Result<Option<EmittedBuffer<T>>> {
        let xi = similarity(&frame.features, self.reference_stats(), self.cfg.sigma_floor);
        let input = classify_input(
            xi,
            frame.value,
            self.wait.len(),
            self.maj.len(),
            &self.cfg,
            self.normal_value,
        );
        let (mut action, mut next) = transition(self.state, input)?;
        if action == Action::A4 && self.maj.len() + self.wait.len() + 1 > self.cfg.t_maj {
            // Merging would overflow the major buffer; close the cycle instead.
            action = Action::A7;
            next = DmmState::Terminate;
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEntry {
                frame_index: frame.frame_index,
                xi,
                value: frame.value,
                input,
                state: self.state,
                action,
                next,
            });
        }
        match action {
            Action::A1 => {
                self.maj_stats = std::mem::take(&mut self.pre_stats);
                self.maj = std::mem::take(&mut self.pre);
                self.maj_stats.add(&frame.features);
                self.maj.push(frame);
            }
            Action::A2 => {
                self.wait_stats = std::mem::take(&mut self.pre_stats);
                self.wait = std::mem::take(&mut self.pre);
                self.wait_stats.add(&frame.features);
                self.wait.push(frame);
            }
            Action::A3 => {
                self.maj_stats.add(&frame.features);
                self.maj.push(frame);
            }
            Action::A4 => {
                let wait_stats = std::mem::take(&mut self.wait_stats);
                self.maj_stats.merge(&wait_stats);
                self.maj.append(&mut self.wait);
                self.maj_stats.add(&frame.features);
                self.maj.push(frame);
            }
            Action::A5 => {
                self.wait_stats.add(&frame.features);
                self.wait.push(frame);
            }
            Action::A6 | Action::A7 => {
                let emitted = self.terminate(action);
                self.state = DmmState::Active;
                let follow = self.push(frame)?;
                debug_assert!(follow.is_none());
                return Ok(emitted);
            }
        }
        self.state = next;
        Ok(None)
    }

    fn terminate(&mut self, action: Action) -> Option<EmittedBuffer<T>> {
        let maj = std::mem::take(&mut self.maj);
        let wait = std::mem::take(&mut self.wait);
        let (maj_len, wait_len) = (maj.len(), wait.len());
        let (emitted, carried) = finalize(maj, wait, &self.cfg);
        self.maj_stats = BufferStats::default();
        self.wait_stats = BufferStats::default();
        self.pre_stats = BufferStats::from_features(carried.iter().map(|f| &f.features));
        let termination = Termination {
            action,
            maj_len,
            wait_len,
            carried: carried.len(),
        };
        self.pre = carried;
        (!emitted.is_empty()).then_some(EmittedBuffer {
            frames: emitted,
            termination: Some(termination),
        })
    }

    /// End of stream: everything still held, carried precursor included, is
    /// emitted in stream order.
    pub fn finish(&mut self) -> Option<EmittedBuffer<T>> {
        let mut frames = std::mem::take(&mut self.pre);
        frames.append(&mut self.maj);
        frames.append(&mut self.wait);
        self.pre_stats = BufferStats::default();
        self.maj_stats = BufferStats::default();
        self.wait_stats = BufferStats::default();
        self.state = DmmState::Active;
        (!frames.is_empty()).then_some(EmittedBuffer {
            frames,
            termination: None,
        })
    }
}
