//! Threshold rules that label each frame as normal or one event of interest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{host_acceleration, FrameRecord, GeometryConfig, Region, VehicleState};
use crate::error::Error;

/// Slack on closed geometric boundaries so that values constructed as
/// `a + b - a` still land inside.
const BOUNDARY_EPS: f64 = 1e-9;
/// Longitudinal gate (m) when associating a neighbor across consecutive frames.
const MATCH_GATE_X: f64 = 2.0;
/// Lateral gate (m) for the same association.
const MATCH_GATE_Y: f64 = 1.0;

/// Event kinds in increasing priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Normal,
    Cutin,
    HardBraking,
    Conflict,
    Crash,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Normal,
        EventKind::Cutin,
        EventKind::HardBraking,
        EventKind::Conflict,
        EventKind::Crash,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Normal => "normal",
            EventKind::Cutin => "cutin",
            EventKind::HardBraking => "hardbraking",
            EventKind::Conflict => "conflict",
            EventKind::Crash => "crash",
        }
    }

    pub fn is_eoi(self) -> bool {
        self != EventKind::Normal
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown event kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub kind: EventKind,
    /// Cut-in range in meters; set for cut-in and conflict labels.
    pub range: Option<f64>,
}

impl EventLabel {
    pub fn normal() -> Self {
        Self {
            kind: EventKind::Normal,
            range: None,
        }
    }

    pub fn of(kind: EventKind) -> Self {
        Self { kind, range: None }
    }

    pub fn cutin(range: f64) -> Self {
        Self {
            kind: EventKind::Cutin,
            range: Some(range),
        }
    }
}

/// Whether `host` overlaps the proximity zone of `lead`: the lead's footprint
/// extended `proximity_front` ahead and `proximity_rear` behind, `car_width` wide.
/// Boundaries are closed.
pub fn in_proximity_zone(host: &VehicleState, lead: &VehicleState, geo: &GeometryConfig) -> bool {
    let l = geo.car_length;
    // Bumper-to-bumper gap with the host behind the lead, and with the host ahead.
    let gap_behind = lead.x - host.x - l;
    let gap_ahead = host.x - lead.x - l;
    let longitudinal =
        gap_behind <= geo.proximity_rear + BOUNDARY_EPS && gap_ahead <= geo.proximity_front + BOUNDARY_EPS;
    let lateral = (lead.y - host.y).abs() <= geo.car_width + BOUNDARY_EPS;
    longitudinal && lateral
}

/// Closest present vehicle ahead of the host over the three front regions.
pub fn closest_front(frame: &FrameRecord) -> Option<(Region, VehicleState)> {
    [Region::FrontLeft, Region::FrontCenter, Region::FrontRight]
        .into_iter()
        .filter_map(|r| {
            let n = frame.neighbor(r);
            (n.present && n.state.x > 0.0).then_some((r, n.state))
        })
        .min_by(|a, b| a.1.x.total_cmp(&b.1.x))
}

/// Lateral speed of the vehicle currently in `region`, by backward difference
/// against the same vehicle in `prev`. The previous occupant is looked up in
/// the same slot first, then in the other slots (the vehicle may have crossed
/// a lane line). Without a plausible match the speed is zero.
pub fn lateral_velocity(
    frame: &FrameRecord,
    prev: &FrameRecord,
    region: Region,
    geo: &GeometryConfig,
) -> f64 {
    let cur = frame.neighbor(region);
    if !cur.present {
        return 0.0;
    }
    let dt = geo.dt();
    let host_shift = prev.host.vx * dt;
    let residual = |s: &VehicleState| {
        let predicted_x = s.x + s.vx * dt - host_shift;
        let ex = (cur.state.x - predicted_x).abs();
        let ey = (cur.state.y - s.y).abs();
        (ex <= MATCH_GATE_X && ey <= MATCH_GATE_Y).then_some(ex + ey)
    };
    let same = prev.neighbor(region);
    let matched = if same.present && residual(&same.state).is_some() {
        Some(same.state)
    } else {
        Region::ALL
            .into_iter()
            .filter(|r| *r != region)
            .filter_map(|r| {
                let n = prev.neighbor(r);
                if !n.present {
                    return None;
                }
                residual(&n.state).map(|score| (score, n.state))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, s)| s)
    };
    match matched {
        Some(p) => (cur.state.y - p.y) / dt,
        None => 0.0,
    }
}

fn is_crash(frame: &FrameRecord, geo: &GeometryConfig) -> bool {
    frame.neighbors.iter().any(|n| {
        n.present
            && n.state.x.abs() <= geo.car_length + BOUNDARY_EPS
            && (n.state.y - frame.host.y).abs() <= geo.car_width + BOUNDARY_EPS
    })
}

/// The cut-in vehicle, if the closest front vehicle is moving into the host lane.
fn cutin_vehicle(frame: &FrameRecord, prev: &FrameRecord, geo: &GeometryConfig) -> Option<VehicleState> {
    let (region, lead) = closest_front(frame)?;
    let dy = lead.y - frame.host.y;
    let band = geo.cutin_band();
    let vy = lateral_velocity(frame, prev, region, geo);
    let entering = (dy > 0.0 && dy < band && vy < 0.0) || (dy < 0.0 && dy > -band && vy > 0.0);
    entering.then_some(lead)
}

/// Label a frame with its single highest-priority event.
pub fn detect(frame: &FrameRecord, prev: Option<&FrameRecord>, geo: &GeometryConfig) -> EventLabel {
    if is_crash(frame, geo) {
        return EventLabel::of(EventKind::Crash);
    }
    let Some(prev) = prev else {
        return EventLabel::normal();
    };
    let cutin = cutin_vehicle(frame, prev, geo);
    if let Some(lead) = cutin {
        if in_proximity_zone(&frame.host, &lead, geo) {
            return EventLabel {
                kind: EventKind::Conflict,
                range: Some(lead.x),
            };
        }
    }
    if host_acceleration(frame, Some(prev), geo.frame_rate) <= geo.hard_brake_threshold {
        return EventLabel::of(EventKind::HardBraking);
    }
    match cutin {
        Some(lead) => EventLabel::cutin(lead.x),
        None => EventLabel::normal(),
    }
}

/// Label a whole trajectory, each frame against its predecessor.
pub fn label_trajectory(frames: &[FrameRecord], geo: &GeometryConfig) -> Vec<EventLabel> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| detect(f, i.checked_sub(1).map(|j| &frames[j]), geo))
        .collect()
}
