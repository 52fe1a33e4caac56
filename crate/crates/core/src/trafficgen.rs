//! Seedable kinematic multi-lane traffic around one host vehicle.
//!
//! Longitudinal motion follows the intelligent-driver car-following rule
//! with bounded acceleration; lane changes are constant-speed lateral ramps
//! accepted on sampled gaps. Random braking impulses and tight lane-change
//! gaps produce hard braking, cut-ins and conflicts. The simulation stops at
//! the first frame in which the host crashes.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FrameRecord, GeometryConfig, Neighbor, Payload, Region, VehicleState, ABSENT_X};
use crate::error::{Error, Result};
use crate::events::{detect, EventKind, EventLabel};
use crate::trajectory::{Trajectory, TrajectoryHeader, FORMAT_VERSION};

/// Longitudinal window ahead of the host, bumper to bumper, in which merges are attempted.
const MERGE_WINDOW: [f64; 2] = [3.0, 12.0];
/// Participants beyond this distance from the host are respawned ahead or behind.
const RESPAWN_DISTANCE: f64 = 130.0;
const IDM_TIME_HEADWAY: f64 = 1.2;
const IDM_MIN_GAP: f64 = 2.0;
const IDM_COMFORT_DECEL: f64 = 2.0;
const LANE_CHANGE_COOLDOWN: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_lanes: usize,
    pub n_participants: usize,
    /// Seconds.
    pub duration: f64,
    pub frame_rate: f64,
    pub seed: u64,
    /// Lane-change attempts per vehicle per second.
    pub lane_change_rate: f64,
    /// Merge attempts per second into the host lane by a vehicle just ahead in an adjacent lane.
    pub merge_rate: f64,
    /// Delay between a driver's perception and the applied acceleration, seconds.
    pub reaction_time: f64,
    /// Braking impulses per vehicle per second.
    pub braking_rate: f64,
    /// Desired-speed range, m/s.
    pub desired_speed: [f64; 2],
    /// Bound on longitudinal acceleration magnitude, m/s².
    pub accel_limit: f64,
    /// Positive acceleration bound, m/s².
    pub max_accel: f64,
    /// Braking impulse deceleration range, m/s².
    pub impulse_decel: [f64; 2],
    /// Braking impulse duration range, seconds.
    pub impulse_duration: [f64; 2],
    /// Lateral speed range of a lane change, m/s.
    pub lateral_speed: [f64; 2],
    /// Range of accepted bumper gaps to the vehicle behind in the target lane, m.
    pub accepted_rear_gap: [f64; 2],
    /// Raw payload size of each frame, bytes.
    pub raw_frame_bytes: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_lanes: 3,
            n_participants: 15,
            duration: 180.0,
            frame_rate: 10.0,
            seed: 0,
            lane_change_rate: 0.04,
            merge_rate: 0.05,
            reaction_time: 0.5,
            braking_rate: 0.004,
            desired_speed: [24.0, 34.0],
            accel_limit: 9.0,
            max_accel: 2.5,
            impulse_decel: [4.0, 7.0],
            impulse_duration: [1.0, 2.5],
            lateral_speed: [0.8, 1.6],
            accepted_rear_gap: [2.0, 30.0],
            raw_frame_bytes: 73_728,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("simulation: {m}")));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if self.n_lanes < 2 {
            return bad("n_lanes must be at least 2");
        }
        if !(self.duration > 0.0) || !(self.frame_rate > 0.0) {
            return bad("duration and frame_rate must be positive");
        }
        if !(self.lane_change_rate >= 0.0) || !(self.braking_rate >= 0.0) || !(self.merge_rate >= 0.0) {
            return bad("event rates must be nonnegative");
        }
        if ![
            self.desired_speed,
            self.impulse_decel,
            self.impulse_duration,
            self.lateral_speed,
            self.accepted_rear_gap,
        ]
        .into_iter()
        .all(range_ok)
        {
            return bad("ranges must be ordered and nonnegative");
        }
        if !(self.reaction_time >= 0.0 && self.reaction_time.is_finite()) {
            return bad("reaction_time must be nonnegative");
        }
        if !(self.max_accel > 0.0) || !(self.accel_limit >= self.max_accel) {
            return bad("need 0 < max_accel <= accel_limit");
        }
        if self.impulse_decel[1] > self.accel_limit {
            return bad("impulse deceleration exceeds accel_limit");
        }
        if !(self.lateral_speed[0] > 0.0) {
            return bad("lateral speed must be positive");
        }
        if self.raw_frame_bytes == 0 {
            return bad("raw_frame_bytes must be positive");
        }
        Ok(())
    }

    /// `base` with this configuration's lane count and frame rate.
    pub fn geometry(&self, base: &GeometryConfig) -> GeometryConfig {
        GeometryConfig {
            n_lanes: self.n_lanes,
            frame_rate: self.frame_rate,
            ..*base
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).floor() as usize
    }
}

/// One vehicle's absolute state at one step. `epoch` changes on respawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub epoch: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
}

#[derive(Debug, Clone)]
struct Vehicle {
    x: f64,
    y: f64,
    vx: f64,
    desired: f64,
    lane: usize,
    target_lane: usize,
    lateral_speed: f64,
    impulse_left: f64,
    impulse_decel: f64,
    cooldown: f64,
    epoch: u32,
    /// Pending acceleration commands, oldest first.
    commands: VecDeque<f64>,
}

impl Vehicle {
    fn changing(&self) -> bool {
        self.lane != self.target_lane
    }

    fn occupies(&self, lane: usize) -> bool {
        self.lane == lane || self.target_lane == lane
    }
}

struct World<'a> {
    cfg: &'a SimConfig,
    geo: GeometryConfig,
    rng: ChaCha8Rng,
    vehicles: Vec<Vehicle>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig, geo: GeometryConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let host_lane = cfg.n_lanes / 2;
        let desired = uniform(&mut rng, cfg.desired_speed);
        let host = Vehicle {
            x: 0.0,
            y: geo.lane_center(host_lane),
            vx: desired,
            desired,
            lane: host_lane,
            target_lane: host_lane,
            lateral_speed: 0.0,
            impulse_left: 0.0,
            impulse_decel: 0.0,
            cooldown: LANE_CHANGE_COOLDOWN,
            epoch: 0,
            commands: VecDeque::new(),
        };
        let mut w = Self {
            cfg,
            geo,
            rng,
            vehicles: vec![host],
        };
        for _ in 0..cfg.n_participants {
            let v = w.spawn(None);
            w.vehicles.push(v);
        }
        w
    }

    /// A participant placed on a free spot, behind or ahead of the host when
    /// `side` is given, anywhere in range otherwise.
    fn spawn(&mut self, side: Option<f64>) -> Vehicle {
        let host_x = self.vehicles[0].x;
        let host_v = self.vehicles[0].vx;
        let mut lane = 0;
        let mut x = host_x + side.unwrap_or(1.0) * RESPAWN_DISTANCE;
        for _ in 0..20 {
            lane = self.rng.random_range(0..self.cfg.n_lanes);
            x = match side {
                Some(s) => host_x + s * self.rng.random_range(100.0..RESPAWN_DISTANCE - 5.0),
                None => host_x + self.rng.random_range(-100.0..100.0),
            };
            let clear = self
                .vehicles
                .iter()
                .all(|o| !o.occupies(lane) || (o.x - x).abs() > 25.0);
            if clear {
                break;
            }
        }
        let desired = uniform(&mut self.rng, self.cfg.desired_speed);
        Vehicle {
            x,
            y: self.geo.lane_center(lane),
            vx: 0.5 * (desired + host_v),
            desired,
            lane,
            target_lane: lane,
            lateral_speed: 0.0,
            impulse_left: 0.0,
            impulse_decel: 0.0,
            cooldown: LANE_CHANGE_COOLDOWN,
            epoch: 0,
            commands: VecDeque::new(),
        }
    }

    /// Nearest vehicle ahead of `i` in `lane` and its bumper gap.
    fn leader(&self, i: usize, lane: usize) -> Option<(usize, f64)> {
        let me = &self.vehicles[i];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, o)| *j != i && o.occupies(lane) && o.x >= me.x)
            .map(|(j, o)| (j, o.x - me.x - self.geo.car_length))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Nearest vehicle behind `i` in `lane` and its bumper gap.
    fn follower(&self, i: usize, lane: usize) -> Option<(usize, f64)> {
        let me = &self.vehicles[i];
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, o)| *j != i && o.occupies(lane) && o.x < me.x)
            .map(|(j, o)| (j, me.x - o.x - self.geo.car_length))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn idm(&self, i: usize) -> f64 {
        let me = &self.vehicles[i];
        let free = 1.0 - (me.vx / me.desired.max(1.0)).powi(4);
        let mut interaction: f64 = 0.0;
        let mut lanes = vec![me.lane];
        if me.changing() {
            lanes.push(me.target_lane);
        }
        for lane in lanes {
            if let Some((j, gap)) = self.leader(i, lane) {
                let dv = me.vx - self.vehicles[j].vx;
                let desired_gap = IDM_MIN_GAP
                    + (me.vx * IDM_TIME_HEADWAY
                        + me.vx * dv / (2.0 * (self.cfg.max_accel * IDM_COMFORT_DECEL).sqrt()))
                    .max(0.0);
                let s = gap.max(0.1);
                interaction = interaction.max((desired_gap / s).powi(2));
            }
        }
        self.cfg.max_accel * (free - interaction)
    }

    fn decide(&mut self) {
        let dt = self.geo.dt();
        let n = self.vehicles.len();
        for i in 0..n {
            let brake_roll: f64 = self.rng.random();
            let lc_roll: f64 = self.rng.random();
            let dir_roll: bool = self.rng.random();
            let gap_sample = uniform(&mut self.rng, self.cfg.accepted_rear_gap);
            let lat_sample = uniform(&mut self.rng, self.cfg.lateral_speed);
            let decel_sample = uniform(&mut self.rng, self.cfg.impulse_decel);
            let dur_sample = uniform(&mut self.rng, self.cfg.impulse_duration);

            let merge_roll: f64 = self.rng.random();
            let merge_gap = uniform(&mut self.rng, MERGE_WINDOW);

            let v = &mut self.vehicles[i];
            if v.impulse_left <= 0.0 && brake_roll < self.cfg.braking_rate * dt {
                v.impulse_left = dur_sample;
                v.impulse_decel = decel_sample;
            }
            if v.changing() || v.cooldown > 0.0 {
                continue;
            }
            let lane = v.lane;
            if i > 0 && merge_roll < self.cfg.merge_rate * dt && self.try_merge(i, merge_gap, lat_sample) {
                continue;
            }
            if lc_roll >= self.cfg.lane_change_rate * dt {
                continue;
            }
            let options: Vec<usize> = [lane.checked_sub(1), Some(lane + 1)]
                .into_iter()
                .flatten()
                .filter(|l| *l < self.cfg.n_lanes)
                .collect();
            let target = if options.len() == 2 {
                options[usize::from(dir_roll)]
            } else {
                options[0]
            };
            let front_ok = self.leader(i, target).is_none_or(|(_, g)| g > 8.0);
            let rear_ok = self.follower(i, target).is_none_or(|(_, g)| g > gap_sample);
            if front_ok && rear_ok {
                let v = &mut self.vehicles[i];
                v.target_lane = target;
                v.lateral_speed = if target > lane { lat_sample } else { -lat_sample };
            }
        }
    }

    /// Merge vehicle `i` into the host lane when it is beside and ahead of
    /// the host with a bumper gap below `max_gap`.
    fn try_merge(&mut self, i: usize, max_gap: f64, lat_speed: f64) -> bool {
        let host = &self.vehicles[0];
        let me = &self.vehicles[i];
        if host.changing() || me.lane.abs_diff(host.lane) != 1 {
            return false;
        }
        let gap = me.x - host.x - self.geo.car_length;
        if !(gap >= MERGE_WINDOW[0] && gap <= max_gap) {
            return false;
        }
        let target = host.lane;
        if self.leader(i, target).is_some_and(|(_, g)| g <= 8.0) {
            return false;
        }
        let v = &mut self.vehicles[i];
        v.target_lane = target;
        v.lateral_speed = if target > v.lane { lat_speed } else { -lat_speed };
        true
    }

    fn step(&mut self) {
        let dt = self.geo.dt();
        let lag = (self.cfg.reaction_time / dt).round() as usize;
        let commands: Vec<f64> = (0..self.vehicles.len()).map(|i| self.idm(i)).collect();
        let mut accels = Vec::with_capacity(commands.len());
        for (v, cmd) in self.vehicles.iter_mut().zip(commands) {
            v.commands.push_back(cmd);
            let perceived = if v.commands.len() > lag {
                v.commands.pop_front().unwrap_or(cmd)
            } else {
                *v.commands.front().unwrap_or(&cmd)
            };
            let mut a = perceived;
            if v.impulse_left > 0.0 {
                a = a.min(-v.impulse_decel);
            }
            accels.push(a.clamp(-self.cfg.accel_limit, self.cfg.max_accel).max(-v.vx / dt));
        }
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            v.x += v.vx * dt + 0.5 * a * dt * dt;
            v.vx = (v.vx + a * dt).max(0.0);
            v.impulse_left = (v.impulse_left - dt).max(0.0);
            v.cooldown = (v.cooldown - dt).max(0.0);
            if v.changing() {
                let target_y = self.geo.lane_center(v.target_lane);
                let next = v.y + v.lateral_speed * dt;
                if (target_y - next) * v.lateral_speed <= 0.0 {
                    v.y = target_y;
                    v.lane = v.target_lane;
                    v.lateral_speed = 0.0;
                    v.cooldown = LANE_CHANGE_COOLDOWN;
                } else {
                    v.y = next;
                }
            }
        }
        for i in 1..self.vehicles.len() {
            let rel = self.vehicles[i].x - self.vehicles[0].x;
            if rel.abs() > RESPAWN_DISTANCE {
                let epoch = self.vehicles[i].epoch + 1;
                let mut fresh = self.spawn(Some(-rel.signum()));
                fresh.epoch = epoch;
                self.vehicles[i] = fresh;
            }
        }
    }

    fn agents(&self) -> Vec<AgentState> {
        self.vehicles
            .iter()
            .enumerate()
            .map(|(id, v)| AgentState {
                id,
                epoch: v.epoch,
                x: v.x,
                y: v.y,
                vx: v.vx,
            })
            .collect()
    }

    fn frame(&self, index: u64) -> Result<FrameRecord> {
        let host = &self.vehicles[0];
        let host_lane = self.geo.lane_of(host.y) as i32;
        let mut closest: [Option<VehicleState>; 6] = [None; 6];
        for o in &self.vehicles[1..] {
            let rel = o.x - host.x;
            if rel.abs() >= ABSENT_X {
                continue;
            }
            let offset = self.geo.lane_of(o.y) as i32 - host_lane;
            let Some(region) = Region::classify(offset, rel) else {
                continue;
            };
            let slot = &mut closest[region.slot()];
            if slot.is_none_or(|s| rel.abs() < s.x.abs()) {
                *slot = Some(VehicleState::new(rel, o.y, o.vx));
            }
        }
        let neighbors: Vec<(Region, Neighbor)> = Region::ALL
            .into_iter()
            .filter_map(|r| closest[r.slot()].map(|s| (r, Neighbor::present(s))))
            .collect();
        FrameRecord::with_sentinels(
            index as f64 / self.cfg.frame_rate,
            index,
            VehicleState::new(0.0, host.y, host.vx),
            &neighbors,
            Payload::Synthetic {
                size: self.cfg.raw_frame_bytes,
            },
            self.cfg.raw_frame_bytes,
            &self.geo,
        )
    }
}

/// Frames plus the absolute state of every vehicle at each frame.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub agents: Vec<Vec<AgentState>>,
}

pub fn simulate(cfg: &SimConfig, base: &GeometryConfig) -> Result<Simulation> {
    cfg.validate()?;
    let geo = cfg.geometry(base);
    geo.validate()?;
    let mut world = World::new(cfg, geo);
    let n = cfg.frame_count();
    let mut frames: Vec<FrameRecord> = Vec::with_capacity(n);
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            world.decide();
            world.step();
        }
        let f = world.frame(i as u64)?;
        let crashed = detect(&f, frames.last(), &geo).kind == EventKind::Crash;
        frames.push(f);
        agents.push(world.agents());
        if crashed {
            break;
        }
    }
    let header = TrajectoryHeader {
        sbb_trajectory: FORMAT_VERSION,
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serialization is infallible"),
    };
    Ok(Simulation {
        trajectory: Trajectory {
            header: Some(header),
            frames,
        },
        agents,
    })
}

pub fn generate(cfg: &SimConfig, base: &GeometryConfig) -> Result<Trajectory> {
    simulate(cfg, base).map(|s| s.trajectory)
}

/// Clear every neighbor of `frame` to its sentinel.
fn clear_neighbors(frame: &mut FrameRecord, geo: &GeometryConfig) {
    for r in Region::ALL {
        frame.neighbors[r.slot()] = Neighbor::absent(r, frame.host.y, geo);
    }
}

/// A cut-in vehicle at `range` ahead, entering from the side with more room.
fn place_cutin(frames: &mut [FrameRecord], at: usize, range: f64, dy: [f64; 2], geo: &GeometryConfig) {
    let host_y = frames[at].host.y;
    let from_left = geo.lane_of(host_y) + 1 < geo.n_lanes;
    let (region, sign) = if from_left {
        (Region::FrontLeft, 1.0)
    } else {
        (Region::FrontRight, -1.0)
    };
    let speed = frames[at - 1].host.vx;
    for (k, offset) in [(at - 1, dy[0]), (at, dy[1])] {
        let f = &mut frames[k];
        clear_neighbors(f, geo);
        f.neighbors[region.slot()] =
            Neighbor::present(VehicleState::new(range, f.host.y + sign * offset, speed));
    }
    frames[at].host.y = frames[at - 1].host.y;
}

/// Overwrite the traffic around frame `at` so that the detector reports
/// exactly `event` there. Crash injection truncates the trajectory after `at`.
pub fn inject_event(traj: &mut Trajectory, event: EventLabel, at: usize, geo: &GeometryConfig) -> Result<()> {
    let len = traj.frames.len();
    if at >= len {
        return Err(Error::Range { index: at, len });
    }
    let needs_prev = matches!(
        event.kind,
        EventKind::Cutin | EventKind::HardBraking | EventKind::Conflict
    );
    if needs_prev && at == 0 {
        return Err(Error::Input(format!(
            "{} injection needs a preceding frame",
            event.kind
        )));
    }
    let frames = &mut traj.frames;
    let steady = |frames: &mut [FrameRecord]| {
        if at > 0 && frames[at].host.vx < frames[at - 1].host.vx {
            frames[at].host.vx = frames[at - 1].host.vx;
        }
    };
    match event.kind {
        EventKind::Normal => {
            clear_neighbors(&mut frames[at], geo);
            steady(frames);
        }
        EventKind::HardBraking => {
            clear_neighbors(&mut frames[at], geo);
            let prev = frames[at - 1].host.vx;
            let drop = (1.0 - geo.hard_brake_threshold) * geo.dt();
            frames[at].host.vx = (prev - drop).max(0.0);
            if frames[at].host.vx > prev + geo.hard_brake_threshold * geo.dt() {
                frames[at - 1].host.vx = drop;
                frames[at].host.vx = 0.0;
            }
        }
        EventKind::Cutin => {
            let range = event.range.unwrap_or(30.0);
            if !(range > geo.car_length + geo.proximity_rear && range < ABSENT_X) {
                return Err(Error::Input(format!(
                    "cut-in range {range} must lie outside the proximity zone and below {ABSENT_X}"
                )));
            }
            let band = geo.cutin_band();
            place_cutin(frames, at, range, [0.9 * band, 0.8 * band], geo);
            steady(frames);
        }
        EventKind::Conflict => {
            let range = geo.car_length + 0.5 * geo.proximity_rear;
            let w = geo.car_width;
            place_cutin(frames, at, range, [0.95 * w, 0.85 * w], geo);
            steady(frames);
        }
        EventKind::Crash => {
            clear_neighbors(&mut frames[at], geo);
            let f = &mut frames[at];
            f.neighbors[Region::FrontCenter.slot()] =
                Neighbor::present(VehicleState::new(0.9 * geo.car_length, f.host.y, f.host.vx));
            frames.truncate(at + 1);
        }
    }
    Ok(())
}
