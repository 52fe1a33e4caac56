//! Line-oriented trajectory files.
//!
//! One JSON object per line. An optional first line carries a header
//! `{"sbb_trajectory": 1, "seed": .., "config": {..}}`; every other line is
//! a frame:
//!
//! ```text
//! {"t":0.1,"frame_index":1,"host":{"x":0.0,"y":5.25,"vx":30.0},
//!  "neighbors":[{"region":3,"x":42.0,"y":5.25,"vx":28.0,"present":true}, ...],
//!  "payload":{"kind":"synthetic","size":185000},"raw_size":185000}
//! ```
//!
//! Absent neighbors may be left out; the reader fills them with sentinels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{FrameRecord, GeometryConfig, Neighbor, Payload, Region, VehicleState};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub sbb_trajectory: u32,
    pub seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub header: Option<TrajectoryHeader>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct NeighborWire {
    region: u8,
    x: f64,
    y: f64,
    vx: f64,
    #[serde(default = "yes")]
    present: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct FrameWire {
    t: f64,
    frame_index: u64,
    host: VehicleState,
    #[serde(default)]
    neighbors: Vec<NeighborWire>,
    payload: Payload,
    raw_size: u64,
}

pub fn frame_to_line(frame: &FrameRecord) -> String {
    let wire = FrameWire {
        t: frame.t,
        frame_index: frame.frame_index,
        host: frame.host,
        neighbors: Region::ALL
            .iter()
            .map(|r| {
                let n = frame.neighbor(*r);
                NeighborWire {
                    region: r.number(),
                    x: n.state.x,
                    y: n.state.y,
                    vx: n.state.vx,
                    present: n.present,
                }
            })
            .collect(),
        payload: frame.payload.clone(),
        raw_size: frame.raw_size,
    };
    serde_json::to_string(&wire).expect("frame serialization is infallible")
}

pub fn parse_frame_line(line: &str, line_no: usize, geo: &GeometryConfig) -> Result<FrameRecord> {
    let wire: FrameWire = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let mut neighbors = Vec::with_capacity(wire.neighbors.len());
    for n in &wire.neighbors {
        let region = Region::from_number(n.region).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unknown region {}", n.region),
        })?;
        let state = VehicleState::new(n.x, n.y, n.vx);
        neighbors.push((
            region,
            Neighbor {
                state,
                present: n.present,
            },
        ));
    }
    FrameRecord::with_sentinels(
        wire.t,
        wire.frame_index,
        wire.host,
        &neighbors,
        wire.payload,
        wire.raw_size,
        geo,
    )
}

pub fn write_trajectory<W: Write>(
    mut w: W,
    header: Option<&TrajectoryHeader>,
    frames: &[FrameRecord],
) -> std::io::Result<()> {
    if let Some(h) = header {
        serde_json::to_writer(&mut w, h)?;
        w.write_all(b"\n")?;
    }
    for f in frames {
        w.write_all(frame_to_line(f).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trajectory<R: BufRead>(r: R, geo: &GeometryConfig) -> Result<Trajectory> {
    let mut out = Trajectory::default();
    let mut last_index: Option<u64> = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 && trimmed.contains("\"sbb_trajectory\"") {
            let h: TrajectoryHeader = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if h.sbb_trajectory != FORMAT_VERSION {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unsupported trajectory version {}", h.sbb_trajectory),
                });
            }
            out.header = Some(h);
            continue;
        }
        let frame = parse_frame_line(trimmed, line_no, geo)?;
        if let Some(prev) = last_index {
            if frame.frame_index <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "frame_index {} does not increase (previous {prev})",
                        frame.frame_index
                    ),
                });
            }
        }
        last_index = Some(frame.frame_index);
        out.frames.push(frame);
    }
    Ok(out)
}

pub fn save(path: &Path, header: Option<&TrajectoryHeader>, frames: &[FrameRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory(BufWriter::new(file), header, frames).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, geo: &GeometryConfig) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory(BufReader::new(file), geo)
}
