//! Node configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rfo_core::analysis::{DEFAULT_MAX_DUTY, DEFAULT_MIN_SAMPLES, DEFAULT_THRESHOLD_DBM};
use rfo_core::ingest::CalibrationProfile;
use rfo_core::model::{ChannelPlan, DeviceKind};
use rfo_core::sync::NodeRole;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::DEFAULT_SNAPSHOT_EVERY;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub plan: String,
    pub threshold_dbm: f64,
    pub max_duty: f64,
    pub min_samples: u64,
    pub cell_deg: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            plan: "UHF-8MHz".into(),
            threshold_dbm: DEFAULT_THRESHOLD_DBM,
            max_duty: DEFAULT_MAX_DUTY,
            min_samples: DEFAULT_MIN_SAMPLES,
            cell_deg: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub node_id: String,
    pub role: NodeRole,
    pub listen: String,
    pub data_dir: PathBuf,
    /// Base URLs of peer nodes, e.g. `http://central:8080`.
    pub peers: Vec<String>,
    /// Shared secret for the `/v1/sync/*` endpoints, both served and called.
    pub peer_token: Option<String>,
    /// Token accepted as an operator before any account exists.
    pub bootstrap_operator_token: Option<String>,
    pub sync_interval_ms: u64,
    pub snapshot_every: u64,
    /// Extra channel plans on top of the built-in ones.
    pub plans: Vec<ChannelPlan>,
    /// Per-device-kind offsets in dB.
    pub calibration: BTreeMap<DeviceKind, f64>,
    pub defaults: Defaults,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            node_id: "node".into(),
            role: NodeRole::Regional,
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            peers: Vec::new(),
            peer_token: None,
            bootstrap_operator_token: None,
            sync_interval_ms: 5_000,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            plans: Vec::new(),
            calibration: BTreeMap::new(),
            defaults: Defaults::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Config::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_id.is_empty() {
            return Err(ConfigError::Invalid("node_id must not be empty".into()));
        }
        if let Some(p) = self.plans.iter().find(|p| !p.is_valid()) {
            return Err(ConfigError::Invalid(format!("channel plan {} is not valid", p.name)));
        }
        self.calibration_profile()?;
        if self.plan(&self.defaults.plan).is_none() {
            return Err(ConfigError::Invalid(format!("default plan {} is unknown", self.defaults.plan)));
        }
        Ok(())
    }

    pub fn all_plans(&self) -> Vec<ChannelPlan> {
        let mut plans = ChannelPlan::builtin();
        plans.extend(self.plans.iter().cloned());
        plans
    }

    pub fn plan(&self, name: &str) -> Option<ChannelPlan> {
        self.all_plans().into_iter().find(|p| p.name == name)
    }

    pub fn calibration_profile(&self) -> Result<CalibrationProfile, ConfigError> {
        let mut profile = CalibrationProfile::default();
        for (&kind, &db) in &self.calibration {
            profile.set(kind, db).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(profile)
    }
}
