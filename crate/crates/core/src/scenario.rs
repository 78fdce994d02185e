//! Scenario files: JSON schema, defaults, validation and canonical form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aqm::AqmConfig;
use crate::cca::{BbrParams, BbrVersion, CompetitorParams};
use crate::mac::{MacConfig, MacError};

pub const DEFAULT_SHAPED_RATE: f64 = 10e6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_cadence")]
    pub output_cadence: f64,
}

fn default_dt() -> f64 {
    1e-4
}

fn default_cadence() -> f64 {
    0.1
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: default_dt(),
            output_cadence: default_cadence(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckMode {
    Shaped,
    MacModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub mode: BottleneckMode,
    /// Shaped rate applied to each direction (bits/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<MacConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Uplink,
    Downlink,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CcaKind {
    #[serde(rename = "bbr_v1", alias = "bbr_v1_preset")]
    BbrV1,
    #[serde(rename = "bbr_v2", alias = "bbr_v2_preset")]
    BbrV2,
    #[serde(rename = "bbr_v3", alias = "bbr_v3_preset")]
    BbrV3,
    #[serde(rename = "competitor")]
    Competitor,
}

impl CcaKind {
    pub fn bbr_version(self) -> Option<BbrVersion> {
        match self {
            CcaKind::BbrV1 => Some(BbrVersion::V1),
            CcaKind::BbrV2 => Some(BbrVersion::V2),
            CcaKind::BbrV3 => Some(BbrVersion::V3),
            CcaKind::Competitor => None,
        }
    }

    fn from_name(name: &str) -> Option<CcaKind> {
        serde_json::from_value(Value::String(name.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    #[serde(default)]
    pub direction: Direction,
    pub cca: CcaKind,
    /// Propagation RTT (s).
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    #[serde(default)]
    pub start: f64,
    /// Defaults to the scenario duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    /// Host identity for per-host fairness; defaults to the flow id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    /// Full BBR parameter set; a partial object in the file overrides the
    /// preset named by `cca`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbr: Option<BbrParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub competitor: Option<CompetitorParams>,
}

fn default_tau_min() -> f64 {
    0.02
}

impl FlowSpec {
    pub fn stop_time(&self, duration: f64) -> f64 {
        self.stop.unwrap_or(duration)
    }

    pub fn host_id(&self) -> &str {
        self.host.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Trailing fraction of samples used for steady-state statistics.
    #[serde(default = "default_steady_fraction")]
    pub steady_fraction: f64,
}

fn default_steady_fraction() -> f64 {
    0.2
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            steady_fraction: default_steady_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub bottleneck: Bottleneck,
    pub aqm: AqmConfig,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyPolicy {
    /// Unknown keys are an error.
    Strict,
    /// Unknown keys are collected and ignored.
    Lenient,
}

/// Replaces each BBR flow's `bbr` entry with the preset for its `cca`,
/// overlaid with any keys given in the file.
fn expand_presets(root: &mut Value) -> Result<(), ScenarioError> {
    let Some(flows) = root.get_mut("flows").and_then(Value::as_array_mut) else {
        return Ok(());
    };
    for (i, flow) in flows.iter_mut().enumerate() {
        let Some(obj) = flow.as_object_mut() else {
            continue;
        };
        let Some(kind) = obj.get("cca").and_then(Value::as_str).and_then(CcaKind::from_name) else {
            continue;
        };
        let Some(version) = kind.bbr_version() else {
            continue;
        };
        let mut merged = serde_json::to_value(BbrParams::preset(version)).expect("preset serializes");
        if let Some(patch) = obj.remove("bbr") {
            let Value::Object(patch) = patch else {
                return Err(ScenarioError::Parse {
                    path: format!("flows[{i}].bbr"),
                    message: "expected an object".into(),
                });
            };
            let target = merged.as_object_mut().expect("preset is an object");
            for (k, v) in patch {
                target.insert(k, v);
            }
        }
        // The preset named by `cca` wins over a stray `version` key.
        merged["version"] = serde_json::to_value(version).expect("version serializes");
        obj.insert("bbr".into(), merged);
    }
    Ok(())
}

/// Parses scenario JSON text, resolving defaults and validating.
pub fn parse_scenario_str(text: &str, policy: KeyPolicy) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let mut root: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    expand_presets(&mut root)?;
    let mut unknown = Vec::new();
    let mut record = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
    let de = serde_ignored::Deserializer::new(root, &mut record);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if policy == KeyPolicy::Strict {
        if let Some(first) = unknown.first() {
            return Err(ScenarioError::UnknownKey(first.clone()));
        }
    }
    scenario.resolve();
    scenario.validate()?;
    Ok((scenario, unknown))
}

pub fn parse_scenario(path: &Path, policy: KeyPolicy) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text, policy).map(|(s, _)| s)
}

fn split_field(msg: &str) -> (&str, &str) {
    match msg.split_once(": ") {
        Some((k, r)) => (k, r),
        None => ("", msg),
    }
}

impl Scenario {
    /// Fills every defaulted field so the canonical form is explicit.
    pub fn resolve(&mut self) {
        self.aqm.resolve();
        match self.bottleneck.mode {
            BottleneckMode::Shaped => {
                self.bottleneck.rate_bps.get_or_insert(DEFAULT_SHAPED_RATE);
            }
            BottleneckMode::MacModel => {
                self.bottleneck.mac.get_or_insert_with(MacConfig::default);
            }
        }
        let duration = self.duration;
        for f in &mut self.flows {
            f.stop.get_or_insert(duration);
            if f.host.is_none() {
                f.host = Some(f.id.clone());
            }
            match f.cca.bbr_version() {
                Some(v) => {
                    f.bbr.get_or_insert_with(|| BbrParams::preset(v));
                    f.competitor = None;
                }
                None => {
                    f.competitor.get_or_insert_with(CompetitorParams::default);
                    f.bbr = None;
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        let dt = self.integrator.dt;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("integrator.dt", "must be positive"));
        }
        if !(self.duration.is_finite() && self.duration > dt) {
            return Err(invalid("duration", "must exceed integrator.dt"));
        }
        let cadence = self.integrator.output_cadence;
        if !(cadence.is_finite() && cadence >= dt) {
            return Err(invalid("integrator.output_cadence", "must be at least integrator.dt"));
        }
        if cadence > self.duration {
            return Err(invalid("integrator.output_cadence", "must not exceed duration"));
        }
        match self.bottleneck.mode {
            BottleneckMode::Shaped => {
                let r = self.bottleneck.rate_bps.unwrap_or(DEFAULT_SHAPED_RATE);
                if !(r.is_finite() && r > 0.0) {
                    return Err(invalid("bottleneck.rate_bps", "must be positive"));
                }
                if self.bottleneck.mac.is_some() {
                    return Err(invalid("bottleneck.mac", "only allowed with mode mac_model"));
                }
            }
            BottleneckMode::MacModel => {
                if self.bottleneck.rate_bps.is_some() {
                    return Err(invalid("bottleneck.rate_bps", "only allowed with mode shaped"));
                }
                let mac = self.bottleneck.mac.clone().unwrap_or_default();
                mac.validate().map_err(|e| match e {
                    MacError::InvalidConfig { field, reason } => {
                        invalid(format!("bottleneck.mac.{field}"), reason)
                    }
                    MacError::InvalidTxop => invalid("bottleneck.mac.t_d", "must exceed T_phy_mu"),
                    other => invalid("bottleneck.mac", other.to_string()),
                })?;
            }
        }
        self.aqm
            .validate()
            .map_err(|(k, r)| invalid(format!("aqm.{k}"), r))?;
        let f = self.report.steady_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(invalid("report.steady_fraction", "must lie in (0, 1]"));
        }
        if self.flows.is_empty() {
            return Err(invalid("flows", "at least one flow is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, flow) in self.flows.iter().enumerate() {
            let key = |k: &str| format!("flows[{i}].{k}");
            if flow.id.is_empty() || flow.id.contains(',') || flow.id.contains('"') {
                return Err(invalid(key("id"), "must be non-empty without commas or quotes"));
            }
            if !seen.insert(flow.id.as_str()) {
                return Err(invalid(key("id"), format!("duplicate flow id {}", flow.id)));
            }
            if !(flow.tau_min.is_finite() && flow.tau_min > 0.0) {
                return Err(invalid(key("tau_min"), "must be positive"));
            }
            if !(flow.start.is_finite() && flow.start >= 0.0) {
                return Err(invalid(key("start"), "must be non-negative"));
            }
            let stop = flow.stop_time(self.duration);
            if !(stop > flow.start) {
                return Err(invalid(key("stop"), "must exceed start"));
            }
            if let Some(b) = &flow.bbr {
                b.validate().map_err(|m| {
                    let (k, r) = split_field(&m);
                    invalid(key(&format!("bbr.{k}")), r)
                })?;
            }
            if let Some(c) = &flow.competitor {
                c.validate().map_err(|m| {
                    let (k, r) = split_field(&m);
                    invalid(key(&format!("competitor.{k}")), r)
                })?;
            }
        }
        for id in self.aqm.fq_weights.keys() {
            if !seen.contains(id.as_str()) {
                return Err(invalid("aqm.fq_weights", format!("unknown flow {id}")));
            }
        }
        for id in self.aqm.cake.flow_weights.keys() {
            if !seen.contains(id.as_str()) {
                return Err(invalid("aqm.cake.flow_weights", format!("unknown flow {id}")));
            }
        }
        Ok(())
    }

    /// Canonical pretty JSON of the resolved scenario.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact canonical JSON, hex encoded.
    pub fn config_hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
