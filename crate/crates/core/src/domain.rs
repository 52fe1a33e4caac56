//! Shared traffic-state types and the 20-feature frame representation.
//!
//! Coordinates follow a host-centric road frame: `x` runs along the road and
//! is relative to the host for neighbors, `y` is measured from the right road
//! edge, `vx` is longitudinal speed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of surrounding regions tracked around the host.
pub const NEIGHBOR_SLOTS: usize = 6;
/// Length of the normalized feature vector.
pub const FEATURE_LEN: usize = 20;
/// Longitudinal offset assigned to an empty region.
pub const ABSENT_X: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, vx: f64) -> Self {
        Self { x, y, vx }
    }
}

/// The six regions around the host, numbered as on the road diagram:
/// odd regions are in front, even regions behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    FrontLeft = 1,
    RearLeft = 2,
    FrontCenter = 3,
    RearCenter = 4,
    FrontRight = 5,
    RearRight = 6,
}

impl Region {
    pub const ALL: [Region; NEIGHBOR_SLOTS] = [
        Region::FrontLeft,
        Region::RearLeft,
        Region::FrontCenter,
        Region::RearCenter,
        Region::FrontRight,
        Region::RearRight,
    ];

    pub fn from_number(n: u8) -> Option<Region> {
        Region::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn slot(self) -> usize {
        self as usize - 1
    }

    pub fn is_front(self) -> bool {
        matches!(self, Region::FrontLeft | Region::FrontCenter | Region::FrontRight)
    }

    /// Lane offset relative to the host lane: +1 left, 0 same lane, -1 right.
    pub fn lane_offset(self) -> i32 {
        match self {
            Region::FrontLeft | Region::RearLeft => 1,
            Region::FrontCenter | Region::RearCenter => 0,
            Region::FrontRight | Region::RearRight => -1,
        }
    }

    /// Region for a vehicle at lane offset `lane_offset` and relative position `x`.
    pub fn classify(lane_offset: i32, x: f64) -> Option<Region> {
        let front = x > 0.0;
        match (lane_offset, front) {
            (1, true) => Some(Region::FrontLeft),
            (1, false) => Some(Region::RearLeft),
            (0, true) => Some(Region::FrontCenter),
            (0, false) => Some(Region::RearCenter),
            (-1, true) => Some(Region::FrontRight),
            (-1, false) => Some(Region::RearRight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub state: VehicleState,
    pub present: bool,
}

impl Neighbor {
    pub fn present(state: VehicleState) -> Self {
        Self { state, present: true }
    }

    /// Sentinel for an empty region: far ahead, stationary, on the region's lane center.
    pub fn absent(region: Region, host_y: f64, geo: &GeometryConfig) -> Self {
        let lane = geo.lane_of(host_y) as i32 + region.lane_offset();
        let lane = lane.clamp(0, geo.n_lanes as i32 - 1) as usize;
        Self {
            state: VehicleState::new(ABSENT_X, geo.lane_center(lane), 0.0),
            present: false,
        }
    }
}

/// What a frame carries besides its traffic state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Stand-in payload with only a size; compression is modelled by the curve.
    Synthetic { size: u64 },
    /// An image file on disk.
    Image { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    pub frame_index: u64,
    pub host: VehicleState,
    /// Indexed by `Region::slot()`.
    pub neighbors: [Neighbor; NEIGHBOR_SLOTS],
    pub payload: Payload,
    pub raw_size: u64,
}

impl FrameRecord {
    /// Assemble a frame from region-labelled neighbors in any order.
    /// Missing regions are an error; use [`FrameRecord::with_sentinels`] to fill them.
    pub fn from_regions(
        t: f64,
        frame_index: u64,
        host: VehicleState,
        neighbors: &[(Region, Neighbor)],
        payload: Payload,
        raw_size: u64,
    ) -> Result<Self> {
        let mut slots: [Option<Neighbor>; NEIGHBOR_SLOTS] = [None; NEIGHBOR_SLOTS];
        for (region, n) in neighbors {
            if slots[region.slot()].replace(*n).is_some() {
                return Err(Error::Structural(format!(
                    "frame {frame_index}: region {} given twice",
                    region.number()
                )));
            }
        }
        let mut out = [Neighbor::present(host); NEIGHBOR_SLOTS];
        for (i, slot) in slots.iter().enumerate() {
            out[i] = slot.ok_or_else(|| {
                Error::Structural(format!(
                    "frame {frame_index}: missing neighbor slot for region {}",
                    i + 1
                ))
            })?;
        }
        let frame = Self {
            t,
            frame_index,
            host,
            neighbors: out,
            payload,
            raw_size,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Like [`FrameRecord::from_regions`] but empty regions receive sentinels.
    pub fn with_sentinels(
        t: f64,
        frame_index: u64,
        host: VehicleState,
        neighbors: &[(Region, Neighbor)],
        payload: Payload,
        raw_size: u64,
        geo: &GeometryConfig,
    ) -> Result<Self> {
        let mut all: Vec<(Region, Neighbor)> = neighbors.to_vec();
        for region in Region::ALL {
            if !neighbors.iter().any(|(r, _)| *r == region) {
                all.push((region, Neighbor::absent(region, host.y, geo)));
            }
        }
        Self::from_regions(t, frame_index, host, &all, payload, raw_size)
    }

    pub fn neighbor(&self, region: Region) -> &Neighbor {
        &self.neighbors[region.slot()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_size == 0 {
            return Err(Error::Structural(format!(
                "frame {}: raw_size must be positive",
                self.frame_index
            )));
        }
        let finite = |s: &VehicleState| s.x.is_finite() && s.y.is_finite() && s.vx.is_finite();
        if !self.t.is_finite() || !finite(&self.host) || !self.neighbors.iter().all(|n| finite(&n.state)) {
            return Err(Error::Structural(format!(
                "frame {}: non-finite state",
                self.frame_index
            )));
        }
        Ok(())
    }

    /// Raw feature values in canonical order `[y0, vx0, x1, y1, vx1, ..., x6, y6, vx6]`.
    pub fn raw_features(&self) -> [f64; FEATURE_LEN] {
        let mut out = [0.0; FEATURE_LEN];
        out[0] = self.host.y;
        out[1] = self.host.vx;
        for (i, n) in self.neighbors.iter().enumerate() {
            out[2 + 3 * i] = n.state.x;
            out[3 + 3 * i] = n.state.y;
            out[4 + 3 * i] = n.state.vx;
        }
        out
    }
}

/// Backward-difference host acceleration; zero without a predecessor.
pub fn host_acceleration(frame: &FrameRecord, prev: Option<&FrameRecord>, frame_rate: f64) -> f64 {
    match prev {
        Some(p) => (frame.host.vx - p.host.vx) * frame_rate,
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_lanes: usize,
    pub lane_width: f64,
    pub car_width: f64,
    pub car_length: f64,
    /// Proximity-zone extension ahead of the lead car's front bumper.
    pub proximity_front: f64,
    /// Proximity-zone extension behind the lead car's rear bumper.
    pub proximity_rear: f64,
    /// Host acceleration at or below this counts as hard braking (m/s², negative).
    pub hard_brake_threshold: f64,
    pub frame_rate: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_lanes: 3,
            lane_width: 3.5,
            car_width: 1.8,
            car_length: 4.5,
            proximity_front: 1.22,
            proximity_rear: 9.14,
            hard_brake_threshold: -4.4,
            frame_rate: 10.0,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            self.lane_width,
            self.car_width,
            self.car_length,
            self.proximity_front,
            self.proximity_rear,
        ];
        if self.n_lanes == 0 || lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("geometry lengths must be positive".into()));
        }
        if !(self.hard_brake_threshold < 0.0) {
            return Err(Error::Config("hard_brake_threshold must be negative".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn road_width(&self) -> f64 {
        self.n_lanes as f64 * self.lane_width
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane index containing lateral position `y`, clamped to the road.
    pub fn lane_of(&self, y: f64) -> usize {
        let lane = (y / self.lane_width).floor();
        lane.clamp(0.0, (self.n_lanes - 1) as f64) as usize
    }

    /// Lateral half-band used by the cut-in rule: (w_ln + w_c) / 2.
    pub fn cutin_band(&self) -> f64 {
        0.5 * (self.lane_width + self.car_width)
    }
}

/// Twenty features, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-component affine normalization bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormBounds {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != FEATURE_LEN || self.max.len() != FEATURE_LEN {
            return Err(Error::Input(format!(
                "normalization bounds need {FEATURE_LEN} components"
            )));
        }
        for (j, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(lo < hi) {
                return Err(Error::Input(format!(
                    "normalization component {j}: min {lo} not below max {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Physical envelope from geometry alone: lateral positions span the road,
    /// relative positions the sensor range, speeds `[0, max_speed]`.
    pub fn from_geometry(geo: &GeometryConfig, max_speed: f64) -> Self {
        let mut min = vec![0.0; FEATURE_LEN];
        let mut max = vec![0.0; FEATURE_LEN];
        let road = geo.road_width();
        min[0] = 0.0;
        max[0] = road;
        min[1] = 0.0;
        max[1] = max_speed;
        for i in 0..NEIGHBOR_SLOTS {
            min[2 + 3 * i] = -ABSENT_X;
            max[2 + 3 * i] = ABSENT_X;
            min[3 + 3 * i] = 0.0;
            max[3 + 3 * i] = road;
            min[4 + 3 * i] = 0.0;
            max[4 + 3 * i] = max_speed;
        }
        Self { min, max }
    }

    /// Componentwise min/max over a corpus. Constant components are widened
    /// by half a unit on each side so the affine map stays defined.
    pub fn from_corpus<'a>(frames: impl IntoIterator<Item = &'a FrameRecord>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; FEATURE_LEN];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_LEN];
        let mut seen = false;
        for f in frames {
            seen = true;
            for (j, v) in f.raw_features().iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        if !seen {
            return Err(Error::Input("empty corpus for normalization bounds".into()));
        }
        for j in 0..FEATURE_LEN {
            if !(min[j] < max[j]) {
                min[j] -= 0.5;
                max[j] += 0.5;
            }
        }
        Self::new(min, max)
    }
}

/// Normalize a frame into the canonical 20-vector, clamping to `[0, 1]`.
pub fn build_feature_vector(frame: &FrameRecord, norm: &NormBounds) -> Result<FeatureVector> {
    frame.validate()?;
    norm.validate()?;
    let raw = frame.raw_features();
    let mut out = [0.0; FEATURE_LEN];
    for j in 0..FEATURE_LEN {
        out[j] = ((raw[j] - norm.min[j]) / (norm.max[j] - norm.min[j])).clamp(0.0, 1.0);
    }
    Ok(FeatureVector(out))
}
