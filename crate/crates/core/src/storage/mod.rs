//! Long-term storage of compressed buffers under a byte budget.
//!
//! A persistent store is a directory holding `manifest.log` and one file per
//! buffer under `buffers/`. Each buffer file is a single JSON header line
//! describing its frames followed by their payload bytes, concatenated in
//! frame order.

pub mod manifest;
pub mod queue;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::EventKind;
use manifest::{ManifestHeader, Record, StoreRecord};
pub use queue::{Admission, EvictionQueue, Policy, PriorityKey};

pub const MANIFEST_FILE: &str = "manifest.log";
pub const BUFFER_DIR: &str = "buffers";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    /// Byte budget; `None` is unlimited.
    pub budget: Option<u64>,
    /// Aging factor in `(0, 0.01]`.
    pub lambda: f64,
    pub policy: Policy,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            budget: None,
            lambda: 1e-4,
            policy: Policy::Prioritized,
        }
    }
}

impl StorageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == Some(0) {
            return Err(Error::Config("storage budget must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 0.01) {
            return Err(Error::Config(format!(
                "aging factor must lie in (0, 0.01], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Aged buffer priority `(1 + lambda)^k * max(v * d)`.
pub fn buffer_value(k: u64, value_quality: impl IntoIterator<Item = (f64, f64)>, lambda: f64) -> f64 {
    let peak = value_quality.into_iter().map(|(v, d)| v * d).fold(0.0, f64::max);
    (1.0 + lambda).powf(k as f64) * peak
}

/// One frame of a stored buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: u64,
    pub label: EventKind,
    /// Filtered value.
    pub value: f64,
    pub quality: f64,
    /// Accounted bytes including metadata; 0 once another buffer owns the payload.
    pub bytes: u64,
    pub payload_len: u64,
    pub raw_size: u64,
    pub released: bool,
}

/// A frame handed to the store together with its compressed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingFrame {
    pub frame_index: u64,
    pub label: EventKind,
    pub value: f64,
    pub quality: f64,
    pub bytes: u64,
    pub raw_size: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferRecord {
    pub id: u64,
    pub vstar: f64,
    pub frames: Vec<FrameEntry>,
    pub tags: Vec<EventKind>,
    pub oversize: bool,
}

impl BufferRecord {
    pub fn size(&self) -> u64 {
        self.frames.iter().map(|f| f.bytes).sum()
    }

    pub fn range(&self) -> (u64, u64) {
        (
            self.frames.first().map_or(0, |f| f.frame_index),
            self.frames.last().map_or(0, |f| f.frame_index),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PushOutcome {
    pub id: u64,
    pub evicted: Vec<u64>,
    pub oversize: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub live: usize,
    pub evicted: usize,
    /// Unparseable or unterminated final manifest line that was dropped.
    pub torn_tail: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct BufferFileHeader {
    id: u64,
    frames: Vec<FrameEntry>,
}

/// Buffers kept under a budget, optionally persisted to a directory.
pub struct Store {
    cfg: StorageConfig,
    queue: EvictionQueue,
    buffers: BTreeMap<u64, BufferRecord>,
    /// Frame index to `(buffer id, quality)` of the copy holding the payload.
    owners: HashMap<u64, (u64, f64)>,
    next_id: u64,
    dir: Option<PathBuf>,
    manifest: Option<File>,
}

impl Store {
    pub fn in_memory(cfg: StorageConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            queue: EvictionQueue::new(cfg.policy, cfg.budget),
            cfg,
            buffers: BTreeMap::new(),
            owners: HashMap::new(),
            next_id: 0,
            dir: None,
            manifest: None,
        })
    }

    /// Start a fresh store in `dir`; refuses to overwrite an existing manifest.
    pub fn create(dir: &Path, cfg: StorageConfig) -> Result<Self> {
        let mut s = Self::in_memory(cfg)?;
        fs::create_dir_all(dir.join(BUFFER_DIR)).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let header = ManifestHeader {
            policy: cfg.policy,
            budget: cfg.budget,
            lambda: cfg.lambda,
        };
        writeln!(file, "{header}").map_err(|e| Error::io(&path, e))?;
        s.dir = Some(dir.to_path_buf());
        s.manifest = Some(file);
        Ok(s)
    }

    /// Reopen a persisted store. A torn final record is dropped from the
    /// manifest and reported.
    pub fn open(dir: &Path) -> Result<(Self, LoadReport)> {
        let loaded = load_manifest(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let file = OpenOptions::new()
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.set_len(loaded.good_len).map_err(|e| Error::io(&path, e))?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0))
            .map_err(|e| Error::io(&path, e))?;
        let cfg = StorageConfig {
            budget: loaded.header.budget,
            lambda: loaded.header.lambda,
            policy: loaded.header.policy,
        };
        let mut s = Self::in_memory(cfg)?;
        s.restore(dir, &loaded)?;
        s.dir = Some(dir.to_path_buf());
        s.manifest = Some(file);
        Ok((s, loaded.report))
    }

    fn restore(&mut self, dir: &Path, loaded: &LoadedManifest) -> Result<()> {
        for rec in &loaded.live {
            let frames = read_buffer_file(dir, rec)?;
            let mut frames = frames;
            for f in frames.iter_mut() {
                if loaded.released.contains(&(rec.id, f.frame_index)) {
                    f.released = true;
                    f.bytes = 0;
                }
            }
            let buf = BufferRecord {
                id: rec.id,
                vstar: rec.vstar,
                tags: rec.tags.clone(),
                oversize: rec.oversize,
                frames,
            };
            for f in &buf.frames {
                if !f.released {
                    self.owners.insert(f.frame_index, (buf.id, f.quality));
                }
            }
            self.queue.insert(buf.id, buf.vstar, buf.size());
            self.buffers.insert(buf.id, buf);
        }
        self.next_id = loaded.next_id;
        Ok(())
    }

    pub fn config(&self) -> &StorageConfig {
        &self.cfg
    }

    pub fn total_bytes(&self) -> u64 {
        self.queue.total()
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn buffers(&self) -> impl Iterator<Item = &BufferRecord> {
        self.buffers.values()
    }

    pub fn buffer(&self, id: u64) -> Option<&BufferRecord> {
        self.buffers.get(&id)
    }

    /// Live buffer ids in eviction order.
    pub fn eviction_order(&self) -> Vec<u64> {
        self.queue.eviction_order()
    }

    /// Frames whose payload is held by a live buffer.
    pub fn recorded_frames(&self) -> impl Iterator<Item = &FrameEntry> {
        self.buffers
            .values()
            .flat_map(|b| b.frames.iter())
            .filter(|f| !f.released)
    }

    fn append(&mut self, rec: &Record) -> Result<()> {
        if let (Some(file), Some(dir)) = (self.manifest.as_mut(), self.dir.as_ref()) {
            let path = dir.join(MANIFEST_FILE);
            writeln!(file, "{rec}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Store one buffer, deduplicating payloads by frame index, then evict
    /// per policy until the budget holds.
    pub fn push(&mut self, frames: Vec<IncomingFrame>) -> Result<PushOutcome> {
        if frames.is_empty() {
            return Err(Error::Contract("cannot store an empty buffer".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let vstar = buffer_value(id, frames.iter().map(|f| (f.value, f.quality)), self.cfg.lambda);

        let mut releases: Vec<(u64, u64)> = Vec::new();
        let mut entries = Vec::with_capacity(frames.len());
        let mut payload = Vec::new();
        for f in frames {
            let mut keep = true;
            if let Some(&(owner, q)) = self.owners.get(&f.frame_index) {
                if f.quality > q {
                    releases.push((owner, f.frame_index));
                } else {
                    keep = false;
                }
            }
            if keep {
                self.owners.insert(f.frame_index, (id, f.quality));
                payload.extend_from_slice(&f.payload);
            }
            entries.push(FrameEntry {
                frame_index: f.frame_index,
                label: f.label,
                value: f.value,
                quality: f.quality,
                bytes: if keep { f.bytes } else { 0 },
                payload_len: if keep { f.payload.len() as u64 } else { 0 },
                raw_size: f.raw_size,
                released: !keep,
            });
        }
        let tags: Vec<EventKind> = entries
            .iter()
            .map(|f| f.label)
            .filter(|k| k.is_eoi())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let buf = BufferRecord {
            id,
            vstar,
            frames: entries,
            tags,
            oversize: false,
        };

        for (owner, frame) in releases {
            let Some(old) = self.buffers.get_mut(&owner) else {
                continue;
            };
            if let Some(e) = old.frames.iter_mut().find(|e| e.frame_index == frame) {
                e.bytes = 0;
                e.released = true;
            }
            let size = old.size();
            self.queue.set_size(owner, size);
            self.append(&Record::Release {
                id: owner,
                frame,
                bytes: size,
            })?;
        }

        let size = buf.size();
        let (first, last) = buf.range();
        let (file, sha256) = self.write_buffer_file(&buf, &payload)?;
        let admission = self.queue.push(id, vstar, size);
        let mut buf = buf;
        buf.oversize = admission.oversize;
        if admission.oversize {
            warn!("buffer {id} ({size} bytes) exceeds the storage budget on its own");
        }
        self.append(&Record::Store(StoreRecord {
            id,
            vstar,
            bytes: size,
            tags: buf.tags.clone(),
            first,
            last,
            file,
            sha256,
            oversize: buf.oversize,
        }))?;
        self.buffers.insert(id, buf);
        for victim in &admission.evicted {
            self.drop_buffer(*victim)?;
        }
        Ok(PushOutcome {
            id,
            evicted: admission.evicted,
            oversize: admission.oversize,
        })
    }

    fn drop_buffer(&mut self, id: u64) -> Result<()> {
        if let Some(b) = self.buffers.remove(&id) {
            for f in &b.frames {
                if self.owners.get(&f.frame_index).is_some_and(|(o, _)| *o == id) {
                    self.owners.remove(&f.frame_index);
                }
            }
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(buffer_file_name(id));
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        self.append(&Record::Evict { id })
    }

    fn write_buffer_file(&self, buf: &BufferRecord, payload: &[u8]) -> Result<(String, String)> {
        let name = buffer_file_name(buf.id);
        let header = BufferFileHeader {
            id: buf.id,
            frames: buf.frames.clone(),
        };
        let mut content = serde_json::to_vec(&header).expect("header serialization is infallible");
        content.push(b'\n');
        content.extend_from_slice(payload);
        let sha = hex::encode(Sha256::digest(&content));
        if let Some(dir) = &self.dir {
            let path = dir.join(&name);
            fs::write(&path, &content).map_err(|e| Error::io(&path, e))?;
        }
        Ok((name, sha))
    }

    /// Payload bytes of one live frame, read back from disk.
    pub fn read_payload(&self, id: u64, frame_index: u64) -> Result<Option<Vec<u8>>> {
        let (Some(dir), Some(buf)) = (&self.dir, self.buffers.get(&id)) else {
            return Ok(None);
        };
        let path = dir.join(buffer_file_name(id));
        let content = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let start = content
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Corrupt {
                id,
                msg: "missing header".into(),
            })?
            + 1;
        let mut offset = start;
        for f in &buf.frames {
            let end = offset + f.payload_len as usize;
            if f.frame_index == frame_index {
                return Ok((f.payload_len > 0).then(|| content[offset..end].to_vec()));
            }
            offset = end;
        }
        Ok(None)
    }
}

pub fn buffer_file_name(id: u64) -> String {
    format!("{BUFFER_DIR}/{id}.bin")
}

struct LoadedManifest {
    header: ManifestHeader,
    live: Vec<StoreRecord>,
    released: BTreeSet<(u64, u64)>,
    next_id: u64,
    good_len: u64,
    report: LoadReport,
}

fn load_manifest(dir: &Path) -> Result<LoadedManifest> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = String::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(&path, e))?;
    let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
    let first = lines.first().copied().unwrap_or("");
    if !first.ends_with('\n') {
        return Err(Error::Parse {
            line: 1,
            msg: "manifest header is incomplete".into(),
        });
    }
    let header = manifest::parse_header(first.trim_end())?;
    let mut good_len = first.len() as u64;
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    let n = lines.len();
    for (i, raw) in lines.drain(..).enumerate().skip(1) {
        let is_last = i + 1 == n;
        let parsed = if raw.ends_with('\n') {
            manifest::parse_record(raw.trim_end(), i + 1)
        } else {
            Err(Error::Parse {
                line: i + 1,
                msg: "unterminated record".into(),
            })
        };
        match parsed {
            Ok(r) => {
                good_len += raw.len() as u64;
                records.push(r);
            }
            Err(e) if is_last => {
                warn!("manifest {}: dropping torn final record: {e}", path.display());
                report.torn_tail = Some(raw.to_string());
            }
            Err(e) => return Err(e),
        }
    }

    let mut live: BTreeMap<u64, StoreRecord> = BTreeMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut released = BTreeSet::new();
    let mut next_id = 0;
    for r in records {
        match r {
            Record::Store(s) => {
                next_id = next_id.max(s.id + 1);
                order.push(s.id);
                live.insert(s.id, s);
            }
            Record::Release { id, frame, .. } => {
                released.insert((id, frame));
            }
            Record::Evict { id } => {
                if live.remove(&id).is_none() {
                    return Err(Error::Corrupt {
                        id,
                        msg: "evicted before being stored".into(),
                    });
                }
                report.evicted += 1;
            }
        }
    }
    let live: Vec<StoreRecord> = order.into_iter().filter_map(|id| live.remove(&id)).collect();
    released.retain(|(id, _)| live.iter().any(|s| s.id == *id));
    report.live = live.len();
    Ok(LoadedManifest {
        header,
        live,
        released,
        next_id,
        good_len,
        report,
    })
}

fn read_buffer_file(dir: &Path, rec: &StoreRecord) -> Result<Vec<FrameEntry>> {
    let id = rec.id;
    let path = dir.join(&rec.file);
    let content = fs::read(&path).map_err(|e| Error::Corrupt {
        id,
        msg: format!("payload file {}: {e}", path.display()),
    })?;
    let sha = hex::encode(Sha256::digest(&content));
    if sha != rec.sha256 {
        return Err(Error::Corrupt {
            id,
            msg: "checksum mismatch".into(),
        });
    }
    let mut reader = BufReader::new(content.as_slice());
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::Corrupt {
        id,
        msg: e.to_string(),
    })?;
    let header: BufferFileHeader = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
        id,
        msg: format!("bad header: {e}"),
    })?;
    if header.id != id {
        return Err(Error::Corrupt {
            id,
            msg: format!("file belongs to buffer {}", header.id),
        });
    }
    Ok(header.frames)
}

/// Read-only view of a persisted store's live buffers.
pub fn load(dir: &Path) -> Result<(Vec<BufferRecord>, LoadReport)> {
    let loaded = load_manifest(dir)?;
    let mut s = Store::in_memory(StorageConfig {
        budget: loaded.header.budget,
        lambda: loaded.header.lambda,
        policy: loaded.header.policy,
    })?;
    s.restore(dir, &loaded)?;
    Ok((s.buffers.into_values().collect(), loaded.report))
}

/// Rewrite the manifest keeping only records of live buffers.
pub fn compact_manifest(dir: &Path) -> Result<LoadReport> {
    let loaded = load_manifest(dir)?;
    for rec in &loaded.live {
        read_buffer_file(dir, rec)?;
    }
    let live_ids: BTreeSet<u64> = loaded.live.iter().map(|s| s.id).collect();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = format!("{}\n", loaded.header);
    for (i, line) in text[..loaded.good_len as usize].lines().enumerate().skip(1) {
        let rec = manifest::parse_record(line, i + 1)?;
        if !matches!(rec, Record::Evict { .. }) && live_ids.contains(&rec.id()) {
            out.push_str(line);
            out.push('\n');
        }
    }
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(loaded.report)
}
