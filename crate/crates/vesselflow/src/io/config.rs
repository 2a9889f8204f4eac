use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::io::output::Probe;
use crate::network::{validate_network, Diagnostic, Network, Node, Severity, Vessel};
use crate::solver::{InitSpec, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Network(#[from] SimError),
    #[error("network validation failed:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

fn default_dir() -> PathBuf {
    PathBuf::from("output")
}
fn default_probe_file() -> String {
    "probes.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_probe_file")]
    pub probe_file: String,
    /// Times at which full-field snapshots are written.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { directory: default_dir(), probe_file: default_probe_file(), snapshots: Vec::new() }
    }
}

/// On-disk layout of a simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    vessels: Vec<Vessel>,
    nodes: Vec<Node>,
    solver: SimConfig,
    #[serde(default)]
    initial: InitSpec,
    #[serde(default)]
    probes: Vec<Probe>,
    #[serde(default)]
    output: OutputSpec,
}

/// A parsed and validated simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub network: Network,
    pub solver: SimConfig,
    pub initial: InitSpec,
    pub probes: Vec<Probe>,
    pub output: OutputSpec,
    /// Non-fatal findings from network validation.
    pub warnings: Vec<Diagnostic>,
}

impl SimulationConfig {
    fn to_raw(&self) -> RawConfig {
        RawConfig {
            vessels: self.network.vessels.values().cloned().collect(),
            nodes: self.network.nodes.values().cloned().collect(),
            solver: self.solver.clone(),
            initial: self.initial.clone(),
            probes: self.probes.clone(),
            output: self.output.clone(),
        }
    }

    /// Normalized JSON: defaults filled in, vessels and nodes sorted by id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("configuration serializes")
    }
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    raw.solver.validate()?;
    let network = Network::new(raw.vessels, raw.nodes)?;
    let diagnostics = validate_network(&network);
    let (errors, warnings): (Vec<_>, Vec<_>) = diagnostics.into_iter().partition(|d| d.severity == Severity::Error);
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    for p in &raw.probes {
        p.validate(&network)?;
    }
    for t in &raw.output.snapshots {
        if !(t.is_finite() && *t >= 0.0) {
            return Err(SimError::InvalidConfig(format!("snapshot time {t} must be finite and non-negative")).into());
        }
    }
    Ok(SimulationConfig {
        network,
        solver: raw.solver,
        initial: raw.initial,
        probes: raw.probes,
        output: raw.output,
        warnings,
    })
}

pub fn load_config(path: &Path) -> Result<SimulationConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text)
}

/// Parses a comma-separated list of non-negative times, returned sorted.
pub fn parse_snapshot_times(text: &str) -> Result<Vec<f64>, SimError> {
    let mut out = Vec::new();
    for piece in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: f64 = piece
            .parse()
            .map_err(|_| SimError::InvalidConfig(format!("snapshot time `{piece}` is not a number")))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(SimError::InvalidConfig(format!("snapshot time {t} must be finite and non-negative")));
        }
        out.push(t);
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}
