//! Scenario configuration: inventory, polling, attack windows, detector
//! thresholds, playbook routing, and run parameters, loaded from one JSON
//! file per scenario.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndr::DetectorConfig;
use crate::response::FirmwareDurations;
use crate::sim::world::HeadendInfo;
use crate::sim::{AttackScenario, LoadModel, SmartMeter};
use crate::time::Calendar;

pub const DEFAULT_SDN_TOKEN: &str = "user:ORWoIJZrgrb9S4jYUy0";

/// Base URLs the playbook commands target; the pipeline registers one
/// connector per prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectorEndpoints {
    pub sdn: String,
    pub cases: String,
    pub notify: String,
    pub reports: String,
    pub ami: String,
}

impl Default for ConnectorEndpoints {
    fn default() -> Self {
        ConnectorEndpoints {
            sdn: "http://sdn.local".to_string(),
            cases: "http://cases.local".to_string(),
            notify: "http://notify.local".to_string(),
            reports: "http://reports.local".to_string(),
            ami: "http://ami.local".to_string(),
        }
    }
}

fn default_start_time() -> DateTime<Utc> {
    Calendar::default().start
}

fn default_training_rounds() -> u32 {
    40
}

fn default_clean_firmware_version() -> String {
    "2.1.0-clean".to_string()
}

fn default_notification_channel() -> String {
    "ir-team".to_string()
}

fn default_notification_recipient() -> String {
    "soc@utility.example".to_string()
}

fn default_baseline_hours() -> f64 {
    2.0
}

fn default_rate_limit_per_min() -> u32 {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    /// Deterministic seed; required so no run is silently nondeterministic.
    pub seed: u64,
    #[serde(default = "default_start_time")]
    pub start_time: DateTime<Utc>,
    pub polling_interval_s: u64,
    pub rounds: u32,
    #[serde(default = "default_training_rounds")]
    pub training_rounds: u32,
    /// Real seconds per virtual second; 0 runs fully virtual (instantaneous).
    #[serde(default)]
    pub clock_scale: f64,
    pub meters: Vec<SmartMeter>,
    pub headend: HeadendInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standby_headend: Option<HeadendInfo>,
    #[serde(default)]
    pub attacks: Vec<AttackScenario>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub load_model: LoadModel,
    #[serde(default)]
    pub firmware: FirmwareDurations,
    #[serde(default = "default_clean_firmware_version")]
    pub clean_firmware_version: String,
    /// Alert signature id -> playbook document path (relative to the
    /// scenario file).
    pub playbooks: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub connectors: ConnectorEndpoints,
    #[serde(default = "default_sdn_token")]
    pub sdn_auth_token: String,
    #[serde(default = "default_notification_channel")]
    pub notification_channel: String,
    #[serde(default = "default_notification_recipient")]
    pub notification_recipient: String,
    #[serde(default = "default_baseline_hours")]
    pub baseline_hours: f64,
    /// Rate limit installed by the DDoS response, messages per minute.
    #[serde(default = "default_rate_limit_per_min")]
    pub rate_limit_per_min: u32,
}

fn default_sdn_token() -> String {
    DEFAULT_SDN_TOKEN.to_string()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("playbook path `{0}` does not exist")]
    MissingPlaybook(PathBuf),
}

impl ScenarioConfig {
    pub fn calendar(&self) -> Calendar {
        Calendar::new(self.start_time)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.meters.is_empty() {
            return Err(ScenarioError::Invalid("at least one meter is required".into()));
        }
        if self.polling_interval_s == 0 {
            return Err(ScenarioError::Invalid("polling interval must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(ScenarioError::Invalid("rounds must be positive".into()));
        }
        if self.clock_scale < 0.0 {
            return Err(ScenarioError::Invalid("clock_scale must be >= 0".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        let mut ips = std::collections::BTreeSet::new();
        for m in &self.meters {
            if !ids.insert(&m.meter_id) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate meter id `{}`",
                    m.meter_id
                )));
            }
            if !ips.insert(m.ip) {
                return Err(ScenarioError::Invalid(format!("duplicate meter ip {}", m.ip)));
            }
            if m.area_m2 <= 0.0 {
                return Err(ScenarioError::Invalid(format!(
                    "meter `{}` area must be positive",
                    m.meter_id
                )));
            }
        }
        if ips.contains(&self.headend.ip) {
            return Err(ScenarioError::Invalid("headend ip collides with a meter".into()));
        }
        for attack in &self.attacks {
            attack
                .validate()
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            for target in &attack.targets {
                if target != crate::sim::TARGET_HEADEND && !ids.contains(target) {
                    return Err(ScenarioError::Invalid(format!(
                        "attack targets unknown meter `{target}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads and validates a scenario, resolving playbook paths relative to
    /// the scenario file and checking they exist.
    pub fn load(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ScenarioConfig = serde_json::from_str(&text)?;
        config.validate()?;

        let base = path.parent().unwrap_or(Path::new("."));
        for playbook_path in config.playbooks.values_mut() {
            if playbook_path.is_relative() {
                *playbook_path = base.join(&playbook_path);
            }
            if !playbook_path.exists() {
                return Err(ScenarioError::MissingPlaybook(playbook_path.clone()));
            }
        }
        Ok(config)
    }
}
