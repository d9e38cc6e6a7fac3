//! Run configuration: TOML file plus `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::fairness::{FairnessMetricKind, DEFAULT_LAMBDA_MAX};
use crate::nn::OptimizerKind;
use crate::{Error, Result};

/// Value of `dataset` that selects the bundled generator.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    B1,
    B2,
    Fpfl,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::B1 => "b1",
            Mode::B2 => "b2",
            Mode::Fpfl => "fpfl",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(Mode::B1),
            "b2" => Ok(Mode::B2),
            "fpfl" => Ok(Mode::Fpfl),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?} (expected b1, b2 or fpfl)"))),
        }
    }
}

/// Fair (teacher) training, also used by the baselines' local updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Config {
    pub lr: f64,
    /// Step size of the multiplier's ascent.
    pub dual_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub optimizer: OptimizerKind,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            lr: 0.001,
            dual_lr: 0.01,
            batch_size: 500,
            epochs: 200,
            lambda_init: 10.0,
            lambda_max: DEFAULT_LAMBDA_MAX,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Private (student) training and the round schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Config {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Defaults to 1e-4 for DemP runs and 5e-5 for EO runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Stop once accuracy gains less than 0.001 over two rounds.
    pub early_stop: bool,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            lr: 0.25,
            clip_norm: 1.5,
            batch_size: 500,
            local_epochs: 5,
            rounds: 4,
            sigma: None,
            epsilon: None,
            delta: None,
            early_stop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path, or `"synthetic"`.
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub mode: Mode,
    pub fairness: FairnessMetricKind,
    /// Defaults to 5 for DemP runs and 2 for EO runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    /// Training rows after duplication, across all agents.
    pub n_target: usize,
    pub test_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Include elapsed time in the report (makes reports non-reproducible).
    pub wall_clock: bool,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: SYNTHETIC.into(),
            schema: None,
            mode: Mode::Fpfl,
            fairness: FairnessMetricKind::DemP,
            agents: None,
            n_target: 50_000,
            test_fraction: 0.2,
            hidden: vec![500, 100],
            seed: 0,
            wall_clock: false,
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn agents(&self) -> usize {
        self.agents.unwrap_or(match self.fairness {
            FairnessMetricKind::DemP => 5,
            FairnessMetricKind::Eo => 2,
        })
    }

    pub fn delta(&self) -> f64 {
        self.phase2.delta.unwrap_or(match self.fairness {
            FairnessMetricKind::DemP => 1e-4,
            FairnessMetricKind::Eo => 0.5e-4,
        })
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    /// Fills fairness-dependent defaults so the config no longer depends on them.
    pub fn resolve(mut self) -> Result<Self> {
        self.agents = Some(self.agents());
        self.phase2.delta = Some(self.delta());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let p1 = &self.phase1;
        let p2 = &self.phase2;
        if self.mode == Mode::Fpfl && p2.sigma.is_some() == p2.epsilon.is_some() {
            return bad("fpfl mode needs exactly one of phase2.sigma and phase2.epsilon".into());
        }
        if let Some(s) = p2.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma must be finite and >= 0, got {s}"));
            }
        }
        if let Some(e) = p2.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("epsilon must be finite and > 0, got {e}"));
            }
        }
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {delta}"));
        }
        for (name, v) in [
            ("phase1.lr", p1.lr),
            ("phase2.lr", p2.lr),
            ("phase2.clip_norm", p2.clip_norm),
            ("phase1.lambda_max", p1.lambda_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("phase1.dual_lr", p1.dual_lr), ("phase1.lambda_init", p1.lambda_init)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if p1.lambda_init > p1.lambda_max {
            return bad(format!("phase1.lambda_init {} exceeds lambda_max {}", p1.lambda_init, p1.lambda_max));
        }
        for (name, v) in [
            ("phase1.batch_size", p1.batch_size),
            ("phase1.epochs", p1.epochs),
            ("phase2.batch_size", p2.batch_size),
            ("phase2.local_epochs", p2.local_epochs),
            ("phase2.rounds", p2.rounds),
            ("agents", self.agents()),
            ("n_target", self.n_target),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        if !self.is_synthetic() && self.schema.is_none() {
            return bad(format!("dataset {:?} needs a schema file", self.dataset));
        }
        if self.is_synthetic() && self.synthetic.rows < 2 {
            return bad("synthetic.rows must be >= 2".into());
        }
        Ok(())
    }
}

/// Parses `text` as a single TOML value, falling back to a bare string.
fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Sets a dotted key (`phase2.rounds`) in a TOML table, creating sub-tables.
fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        Error::InvalidConfig(format!("empty override key {key:?}"))
    })?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Builds a resolved, validated config from an optional TOML file and
/// `key=value` overrides. Unknown keys are rejected.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
    for (k, v) in overrides {
        set_key(&mut table, k, parse_value(v))?;
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
    cfg.resolve()
}
