//! Run configuration: one JSON document holding every section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corruptions::{CorruptionConfig, CorruptionKind};
use crate::detector::{SynthConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::oaloss::Hyper;
use crate::oamix::OamixConfig;

/// Which corruption cells the benchmark evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { kinds: CorruptionKind::ALL.to_vec(), severities: vec![1, 2, 3, 4, 5] }
    }
}

/// Seeds and gate thresholds of the `repro` pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproConfig {
    /// Seed offsets added to the global seed; one full run per entry.
    pub seeds: Vec<u64>,
    /// Required mean mPC gain of oadg over baseline.
    pub min_mpc_gain: f64,
    /// Allowed mean clean-mAP drop of oadg below baseline.
    pub max_clean_drop: f64,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], min_mpc_gain: 0.02, max_clean_drop: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub oamix: OamixConfig,
    pub corruption: CorruptionConfig,
    pub hyper: Hyper,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub repro: ReproConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            oamix: OamixConfig::default(),
            corruption: CorruptionConfig::default(),
            hyper: Hyper::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            repro: ReproConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.oamix.validate()?;
        self.corruption.validate()?;
        self.hyper.validate()?;
        self.train.validate()?;
        if self.train.grid != self.synth.grid {
            return Err(Error::Config(format!(
                "train.grid {} differs from synth.grid {}",
                self.train.grid, self.synth.grid
            )));
        }
        if self.eval.kinds.is_empty() || self.eval.severities.is_empty() {
            return Err(Error::Config("eval needs at least one kind and one severity".into()));
        }
        if let Some(s) = self.eval.severities.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::Config(format!("eval severity {s} not in 1..=5")));
        }
        if self.repro.seeds.is_empty() {
            return Err(Error::Config("repro.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Parses and validates a config document. Missing keys take defaults;
    /// unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.into())),
            Err(e) => return Err(e.into()),
        };
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
