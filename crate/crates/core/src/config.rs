//! Session configuration: physics models, protocol knobs and endpoints, with
//! a TOML file representation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::{ClickPolicy, DEFAULT_WINDOW};
use crate::model::TICKS_PER_SECOND;
use crate::reconcile::CascadeConfig;
use crate::sim::{validate_models, ClockModel, LinkModel, SourceModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alice,
    Bob,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alice" => Ok(Role::Alice),
            "bob" => Ok(Role::Bob),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
        })
    }
}

/// Deliberate failures for exercising the abort paths.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    /// Epochs where Alice aborts after a successful verification.
    pub abort_epochs: Vec<u32>,
    /// Epochs where Bob flips one corrected bit before verification.
    pub residual_error_epochs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub scenario: Option<String>,
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
    pub epoch_seconds: u32,
    pub alice_rotation: f64,
    pub bob_rotation: f64,
    pub window: u64,
    /// Half-width of the first offset search, ticks.
    pub search_range: u64,
    pub lock_threshold: f64,
    pub double_click_policy: ClickPolicy,
    pub double_click_window: u64,
    pub dead_time_rejection: bool,
    pub safety_bits: u64,
    pub verify_rounds: u32,
    pub pa_block_bits: usize,
    /// Account for the unequal 0/1 probabilities in the secure length.
    pub bias_correction: bool,
    /// Send each parity as a full byte.
    pub parity_byte_compat: bool,
    pub output_dir: PathBuf,
    pub role: Option<Role>,
    pub listen: Option<String>,
    pub connect: Option<String>,
    pub source: SourceModel,
    pub alice: LinkModel,
    pub bob: LinkModel,
    pub clock: ClockModel,
    pub cascade: CascadeConfig,
    pub faults: FaultConfig,
}

pub const DEFAULT_PORT: u16 = 4187;
pub const MAX_SEARCH_RANGE: u64 = 640_000_000;

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            scenario: None,
            seed: 1,
            duration: 60.0,
            epoch_seconds: 1,
            alice_rotation: 0.0,
            bob_rotation: 0.0,
            window: DEFAULT_WINDOW,
            search_range: MAX_SEARCH_RANGE,
            lock_threshold: 5.0,
            double_click_policy: ClickPolicy::Randomize,
            double_click_window: 6,
            dead_time_rejection: true,
            safety_bits: 30,
            verify_rounds: 64,
            pa_block_bits: 4096,
            bias_correction: false,
            parity_byte_compat: false,
            output_dir: PathBuf::from("out"),
            role: None,
            listen: None,
            connect: None,
            source: SourceModel::default(),
            alice: LinkModel::default(),
            bob: LinkModel::default(),
            clock: ClockModel::default(),
            cascade: CascadeConfig::default(),
            faults: FaultConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn epoch_ticks(&self) -> u64 {
        self.epoch_seconds as u64 * TICKS_PER_SECOND
    }

    pub fn epoch_count(&self) -> u32 {
        (self.duration / self.epoch_seconds as f64).ceil().max(0.0) as u32
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        validate_models(&self.source, &self.alice, &self.bob, &self.clock)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cascade.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} must be below 2^63", self.seed));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be >= 0", self.duration));
        }
        if !matches!(self.epoch_seconds, 1 | 2) {
            return bad(format!("epoch_seconds {} must be 1 or 2", self.epoch_seconds));
        }
        if self.window.is_multiple_of(2) {
            return bad(format!("window {} must be odd", self.window));
        }
        if self.search_range == 0 || self.search_range > MAX_SEARCH_RANGE {
            return bad(format!("search_range {} must be in 1..={MAX_SEARCH_RANGE}", self.search_range));
        }
        if !(self.lock_threshold > 0.0) {
            return bad("lock_threshold must be positive".into());
        }
        if self.verify_rounds < 16 {
            return bad(format!("verify_rounds {} must be at least 16", self.verify_rounds));
        }
        if self.pa_block_bits == 0 || self.pa_block_bits > 1 << 16 {
            return bad(format!("pa_block_bits {} out of range", self.pa_block_bits));
        }
        if !self.clock.resync_period.is_multiple_of(TICKS_PER_SECOND) && !TICKS_PER_SECOND.is_multiple_of(self.clock.resync_period) {
            return bad("resync_period must divide or be a multiple of one second".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<SessionConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<SessionConfig, ConfigError> {
        SessionConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
