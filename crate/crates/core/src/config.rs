//! Whole-run configuration document (TOML).
//!
//! ```toml
//! model = "model.json"            # optional; reference valuation when absent
//!
//! [geometry]                      # lane and vehicle dimensions, frame rate
//! [tracker]                       # t_maj, t_wait, min_pre, xi_0, sigma_floor
//! [value]                         # sigma_f, filter
//! [lbo]                           # mode, eta, zeta, [lbo.curve], [lbo.solver]
//! [storage]                       # budget (bytes, absent = unlimited), lambda, policy
//! [compressor]                    # kind, image_root
//! [source]                        # kind = "file" + path, or kind = "generator" + simulation fields
//! ```
//!
//! Relative paths are resolved against the directory of the loaded file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compressor::CompressorConfig;
use crate::domain::GeometryConfig;
use crate::error::{Error, Result};
use crate::lbo::{LboWeights, QualityRatioCurve, SolverOptions};
use crate::storage::StorageConfig;
use crate::tracker::TrackerConfig;
use crate::trafficgen::SimConfig;
use crate::value::ValueConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LboMode {
    /// Closed-form per-frame solution.
    #[default]
    Decoupled,
    /// Joint optimization over the buffer.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LboConfig {
    pub mode: LboMode,
    pub eta: f64,
    pub zeta: f64,
    pub curve: QualityRatioCurve,
    pub solver: SolverOptions,
}

impl Default for LboConfig {
    fn default() -> Self {
        let w = LboWeights::default();
        Self {
            mode: LboMode::Decoupled,
            eta: w.eta,
            zeta: w.zeta,
            curve: QualityRatioCurve::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl LboConfig {
    pub fn weights(&self) -> LboWeights {
        LboWeights {
            eta: self.eta,
            zeta: self.zeta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.curve.validate()?;
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    File { path: PathBuf },
    Generator(SimConfig),
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Generator(SimConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub tracker: TrackerConfig,
    pub value: ValueConfig,
    pub lbo: LboConfig,
    pub storage: StorageConfig,
    pub compressor: CompressorConfig,
    pub source: SourceConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = cfg.model.as_mut() {
            resolve(base, m);
        }
        if let Some(r) = cfg.compressor.image_root.as_mut() {
            resolve(base, r);
        }
        if let SourceConfig::File { path } = &mut cfg.source {
            resolve(base, path);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Geometry used for the run; a generator source overrides lane count and frame rate.
    pub fn effective_geometry(&self) -> GeometryConfig {
        match &self.source {
            SourceConfig::Generator(sim) => sim.geometry(&self.geometry),
            SourceConfig::File { .. } => self.geometry,
        }
    }

    /// Check every section and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.effective_geometry().validate()?;
        self.tracker.validate()?;
        self.value.validate()?;
        self.lbo.validate()?;
        self.storage.validate()?;
        let missing = |p: &Path| Error::Config(format!("{} does not exist", p.display()));
        if let Some(m) = &self.model {
            if !m.is_file() {
                return Err(missing(m));
            }
        }
        if let Some(r) = &self.compressor.image_root {
            if !r.is_dir() {
                return Err(missing(r));
            }
        }
        match &self.source {
            SourceConfig::File { path } if !path.is_file() => return Err(missing(path)),
            SourceConfig::Generator(sim) => sim.validate()?,
            SourceConfig::File { .. } => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::Policy;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_document() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [lbo]
            mode = "coupled"
            zeta = 2.0
            [storage]
            budget = 5000000
            policy = "fifo"
            [source]
            kind = "generator"
            seed = 9
            duration = 60.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.lbo.mode, LboMode::Coupled);
        assert_eq!(cfg.lbo.eta, 0.9);
        assert_eq!(cfg.storage.budget, Some(5_000_000));
        assert_eq!(cfg.storage.policy, Policy::Fifo);
        match &cfg.source {
            SourceConfig::Generator(s) => {
                assert_eq!(s.seed, 9);
                assert_eq!(s.n_participants, 15);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(
            PipelineConfig::from_toml("[lbo]\neta = \"x\""),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("unknown = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[lbo]\nbogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[source]\nkind = \"generator\"\nbogus = 1"),
            Err(Error::Config(_))
        ));
        let cfg = PipelineConfig::from_toml("[tracker]\nt_wait = 10\nmin_pre = 20").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = PipelineConfig::from_toml("model = \"/nonexistent/model.json\"").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.jsonl"), "").unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[source]\nkind = \"file\"\npath = \"t.jsonl\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.source,
            SourceConfig::File {
                path: dir.path().join("t.jsonl")
            }
        );
    }
}
