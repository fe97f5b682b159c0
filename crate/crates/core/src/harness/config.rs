//! Scenario configuration: a versioned TOML document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::service::{Endpoint, Fault, LatencyModel, SyntheticService};
use super::HarnessError;
use crate::ledger::{NetworkConfig, PeerConfig, MAX_PEERS};
use crate::slogen::{GeneratorBackend, Objective, SliKind, DEFAULT_WINDOWS};
use crate::Duration;

pub const SCHEMA_VERSION: u32 = 1;

/// 2023-11-14T22:13:20Z, a fixed origin for simulated runs.
pub const DEFAULT_START_MS: i64 = 1_700_000_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrapeSettings {
    pub interval: Duration,
    pub timeout: Duration,
    /// Interface the simulated services bind to.
    pub host: String,
    pub retention: Duration,
}

impl Default for ScrapeSettings {
    fn default() -> Self {
        ScrapeSettings {
            interval: Duration::from_secs(15),
            timeout: Duration::from_secs(2),
            host: "127.0.0.1".into(),
            retention: Duration::from_days(8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlSettings {
    /// Training peers; the first `peers` ledger peers take part.
    pub peers: usize,
    pub rounds: u64,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Model initialisation seed.
    pub seed: u64,
    pub feature_window: Duration,
    pub feature_step: Duration,
    /// Range used inside candidate and label queries.
    pub rate_window: Duration,
    /// Spacing of training rows.
    pub sample_every: Duration,
    /// Trailing fraction of rows kept out of training for ranking and AUC.
    pub holdout: f64,
    /// Service whose degradation defines the label; the first objective's when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_service: Option<String>,
    pub theta: f64,
    pub lambda: f64,
    pub deadline: Duration,
}

impl Default for FlSettings {
    fn default() -> Self {
        FlSettings {
            peers: 3,
            rounds: 2,
            epochs: 200,
            lr: 0.5,
            hidden: 8,
            seed: 7,
            feature_window: Duration::from_mins(2),
            feature_step: Duration::from_secs(15),
            rate_window: Duration::from_mins(1),
            sample_every: Duration::from_mins(1),
            holdout: 0.25,
            label_service: None,
            theta: 0.02,
            lambda: 1.0,
            deadline: Duration::from_secs(60),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub service: String,
    pub kind: SliKind,
    pub target: f64,
    pub window: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ObjectiveConfig {
    pub fn objective(&self) -> Objective {
        let mut o = match self.kind {
            SliKind::Latency => Objective::latency(self.target, self.window, self.threshold_seconds.unwrap_or(1.0)),
            SliKind::Availability => Objective::availability(self.target, self.window),
        };
        o.description = self.description.clone();
        o
    }
}

/// Ledger timing is in milliseconds since durations below a second are common here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerSettings {
    pub peer_count: usize,
    pub latency_ms: u64,
    pub block_interval_ms: u64,
    pub max_block_txs: usize,
}

impl Default for LedgerSettings {
    fn default() -> Self {
        LedgerSettings { peer_count: 4, latency_ms: 50, block_interval_ms: 500, max_block_txs: 100 }
    }
}

impl LedgerSettings {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            peer_count: self.peer_count,
            latency: Duration::from_millis(self.latency_ms),
            block_interval: Duration::from_millis(self.block_interval_ms),
            peer: PeerConfig { max_block_txs: self.max_block_txs, ..PeerConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSettings {
    pub interval: Duration,
    /// Trailing span of the run the monitor covers.
    pub duration: Duration,
    pub short_window: Duration,
    pub horizon: Duration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub webhook: Option<String>,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        MonitorSettings {
            interval: Duration::from_mins(1),
            duration: Duration::from_hours(1),
            short_window: Duration::from_hours(1),
            horizon: Duration::from_hours(6),
            webhook: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ms: i64,
    pub duration: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub services: Vec<SyntheticService>,
    #[serde(default)]
    pub scrape: ScrapeSettings,
    #[serde(default)]
    pub fl: FlSettings,
    pub objectives: Vec<ObjectiveConfig>,
    #[serde(default)]
    pub ledger: LedgerSettings,
    #[serde(default = "default_backend")]
    pub backend: GeneratorBackend,
    #[serde(default)]
    pub monitor: MonitorSettings,
}

fn default_start() -> i64 {
    DEFAULT_START_MS
}

fn default_backend() -> GeneratorBackend {
    GeneratorBackend::Template
}

impl ScenarioConfig {
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.duration.as_millis_i64()
    }

    pub fn label_service(&self) -> &str {
        self.fl.label_service.as_deref().or(self.objectives.first().map(|o| o.service.as_str())).unwrap_or(&self.services[0].name)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            p.push(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.services.is_empty() {
            p.push("no services".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.services {
            if !names.insert(s.name.as_str()) {
                p.push(format!("duplicate service {}", s.name));
            }
            p.extend(s.problems());
        }
        let fl = &self.fl;
        let warmup = fl.feature_window.as_millis() + fl.rate_window.as_millis();
        if self.duration.as_millis() <= warmup + fl.sample_every.as_millis() * 8 {
            p.push(format!("duration {} leaves too few training rows", self.duration));
        }
        if self.scrape.interval < Duration::from_secs(1) {
            p.push("scrape interval must be at least 1s".into());
        }
        if fl.rate_window.as_millis() < 2 * self.scrape.interval.as_millis() {
            p.push("fl.rate_window must span at least two scrapes".into());
        }
        if fl.feature_step.as_millis() == 0 || fl.feature_window < fl.feature_step || fl.sample_every.as_millis() == 0 {
            p.push("fl.feature_window must be at least one fl.feature_step, and steps non-zero".into());
        }
        if fl.peers == 0 || fl.peers > self.ledger.peer_count {
            p.push(format!("fl.peers must be between 1 and ledger.peer_count ({})", self.ledger.peer_count));
        }
        if fl.rounds == 0 || fl.epochs == 0 || fl.hidden == 0 {
            p.push("fl.rounds, fl.epochs and fl.hidden must be positive".into());
        }
        if !(fl.lr > 0.0 && fl.lr.is_finite()) {
            p.push("fl.lr must be positive".into());
        }
        if !(0.0..0.9).contains(&fl.holdout) {
            p.push("fl.holdout must be in [0, 0.9)".into());
        }
        if let Some(s) = &fl.label_service {
            if !names.contains(s.as_str()) {
                p.push(format!("fl.label_service {s} is not a configured service"));
            }
        }
        if self.ledger.peer_count == 0 || self.ledger.peer_count > MAX_PEERS {
            p.push(format!("ledger.peer_count must be between 1 and {MAX_PEERS}"));
        }
        if self.ledger.block_interval_ms == 0 || self.ledger.max_block_txs == 0 {
            p.push("ledger.block_interval_ms and ledger.max_block_txs must be positive".into());
        }
        if self.objectives.is_empty() {
            p.push("no objectives".into());
        }
        for o in &self.objectives {
            if !names.contains(o.service.as_str()) {
                p.push(format!("objective for unknown service {}", o.service));
            }
            if !(o.target > 0.0 && o.target < 1.0) {
                p.push(format!("{}: target {} outside (0, 1)", o.service, o.target));
            }
            if !DEFAULT_WINDOWS.contains(&o.window) {
                p.push(format!("{}: window {} is not one of 7d, 28d, 30d", o.service, o.window));
            }
            match (o.kind, o.threshold_seconds) {
                (SliKind::Latency, None) => p.push(format!("{}: latency objective needs threshold_seconds", o.service)),
                (SliKind::Latency, Some(t)) if !(t > 0.0) => p.push(format!("{}: threshold_seconds must be positive", o.service)),
                _ => {}
            }
        }
        if self.monitor.interval < Duration::from_secs(1) {
            p.push("monitor.interval must be at least 1s".into());
        }
        p
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(p))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Read a file, or a built-in scenario when `path` names one and no such file exists.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if !path.exists() {
            if let Some(b) = path.to_str().and_then(builtin) {
                return Ok(b);
            }
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "default" => Some(default_scenario()),
        _ => None,
    }
}

fn ep(path: &str, base_rate: f64, error_ratio: f64, median_s: f64, sigma: f64) -> Endpoint {
    Endpoint { path: path.into(), base_rate, error_ratio, latency: LatencyModel { mu: median_s.ln(), sigma } }
}

fn error_burst(start_min: u64, mins: u64, path: &str, ratio: f64) -> Fault {
    Fault {
        start: Duration::from_mins(start_min),
        duration: Duration::from_mins(mins),
        path: Some(path.into()),
        error_ratio_override: Some(ratio),
        latency_scale: None,
    }
}

/// Two services; the secret store suffers recurring error bursts on one endpoint.
pub fn default_scenario() -> ScenarioConfig {
    let vault = SyntheticService {
        name: "vault".into(),
        port: 0,
        endpoints: vec![ep("/secrets", 20.0, 0.002, 0.08, 0.5), ep("/health", 5.0, 0.0, 0.01, 0.3)],
        faults: vec![
            error_burst(40, 10, "/secrets", 0.2),
            error_burst(100, 15, "/secrets", 0.2),
            error_burst(170, 10, "/secrets", 0.2),
            error_burst(210, 12, "/secrets", 0.2),
        ],
    };
    let auth = SyntheticService {
        name: "auth".into(),
        port: 0,
        endpoints: vec![ep("/login", 10.0, 0.01, 0.12, 0.6), ep("/token", 8.0, 0.005, 0.05, 0.4)],
        faults: vec![],
    };
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "default".into(),
        seed: 42,
        start_ms: DEFAULT_START_MS,
        duration: Duration::from_hours(4),
        output_dir: None,
        services: vec![vault, auth],
        scrape: ScrapeSettings::default(),
        fl: FlSettings::default(),
        objectives: vec![
            ObjectiveConfig {
                service: "vault".into(),
                kind: SliKind::Availability,
                target: 0.99,
                window: Duration::from_days(30),
                threshold_seconds: None,
                description: None,
            },
            ObjectiveConfig {
                service: "vault".into(),
                kind: SliKind::Latency,
                target: 0.99,
                window: Duration::from_days(30),
                threshold_seconds: Some(1.0),
                description: None,
            },
        ],
        ledger: LedgerSettings::default(),
        backend: GeneratorBackend::Template,
        monitor: MonitorSettings::default(),
    }
}
