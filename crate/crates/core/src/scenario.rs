//! TOML scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    CellConfig, ConfigError, RunConfig, SecurityConfig, SimulationConfig, Strategy, TrailsConfig,
};
use crate::entity::MovementParams;
use crate::notify::NotifyParams;
use crate::threat::TrafficConfig;
use crate::topology::{Topology, TopologyConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{key}: {message}")]
    Parse { key: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl ScenarioError {
    /// Key a parse or validation error refers to.
    pub fn key(&self) -> Option<&str> {
        match self {
            ScenarioError::Io { .. } => None,
            ScenarioError::Parse { key, .. } => Some(key),
            ScenarioError::Config(e) => Some(&e.key),
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, ScenarioError::Io { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seeds: vec![1, 2, 3, 4, 5],
            strategies: vec![Strategy::Uninformed, Strategy::Protocols { notification: true, trails: true }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: Option<PathBuf>,
}

/// A scenario: simulation parameters plus sweep and output settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    /// Topology file to load instead of generating one, relative to the
    /// scenario file.
    pub topology_file: Option<PathBuf>,
    pub topology: TopologyConfig,
    pub cells: CellConfig,
    pub security: SecurityConfig,
    pub movement: MovementParams,
    pub trails: TrailsConfig,
    pub notification: NotifyParams,
    pub traffic: TrafficConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Dotted key of the assignment or table header on the line holding byte
/// `offset`.
fn key_at(source: &str, offset: usize) -> Option<String> {
    let offset = offset.min(source.len());
    let line_start = source[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line_end = source[offset..].find('\n').map_or(source.len(), |i| offset + i);
    let line = source[line_start..line_end].trim();
    let table = source[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    if line.starts_with('[') {
        return Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    }
    let name = line.split('=').next()?.trim();
    if name.is_empty() {
        return table;
    }
    Some(match table {
        Some(t) => format!("{t}.{name}"),
        None => name.to_string(),
    })
}

fn parse_error(source: &str, e: &toml::de::Error) -> ScenarioError {
    let message = e.message().to_string();
    let named = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    let located = e.span().and_then(|span| key_at(source, span.start));
    let key = match (located, named) {
        (Some(loc), Some(field)) if !loc.ends_with(&field) => format!("{loc}.{field}"),
        (Some(loc), _) => loc,
        (None, Some(field)) => field,
        (None, None) => "scenario".to_string(),
    };
    ScenarioError::Parse { key, message }
}

impl ScenarioFile {
    /// Parses and validates scenario text.
    pub fn parse(source: &str) -> Result<ScenarioFile, ScenarioError> {
        let scenario: ScenarioFile = toml::from_str(source).map_err(|e| parse_error(source, &e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<ScenarioFile, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut scenario = ScenarioFile::parse(&text)?;
        if let Some(file) = &scenario.topology_file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                scenario.topology_file = Some(base.join(file));
            }
        }
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.simulation().validate()?;
        if self.sweep.seeds.is_empty() {
            return Err(ConfigError::new("sweep.seeds", "must list at least one seed"));
        }
        if self.sweep.strategies.is_empty() {
            return Err(ConfigError::new("sweep.strategies", "must list at least one strategy"));
        }
        Ok(())
    }

    /// Simulation parameters as written in the file.
    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            topology: self.topology.clone(),
            cells: self.cells.clone(),
            security: self.security.clone(),
            movement: self.movement,
            trails: self.trails.clone(),
            notification: self.notification,
            traffic: self.traffic.clone(),
            run: self.run.clone(),
        }
    }

    /// Simulation parameters with the strategy and seed replaced.
    pub fn simulation_for(&self, strategy: Strategy, seed: u64) -> SimulationConfig {
        let mut config = self.simulation();
        config.run.strategy = strategy;
        config.run.seed = seed;
        config
    }

    /// Loads the referenced topology file, if any.
    pub fn load_topology(&self) -> Result<Option<Topology>, ScenarioError> {
        let Some(path) = &self.topology_file else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.clone(),
            source,
        })?;
        Topology::from_text(&text)
            .map(Some)
            .map_err(|e| ScenarioError::Parse {
                key: "topology_file".into(),
                message: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = ScenarioFile::parse("").unwrap();
        assert_eq!(s.simulation(), SimulationConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioFile::parse("[security]\nmin_sek = 3\n").unwrap_err();
        assert_eq!(err.key(), Some("security.min_sek"));
    }

    #[test]
    fn type_error_is_located() {
        let err = ScenarioFile::parse("[run]\nduration = \"long\"\n").unwrap_err();
        assert_eq!(err.key(), Some("run.duration"));
    }

    #[test]
    fn invariant_violation_names_key() {
        let err = ScenarioFile::parse("[security]\nmin_sec = -1\n").unwrap_err();
        assert_eq!(err.key(), Some("security.min_sec"));
    }

    #[test]
    fn strategies_parse_from_labels() {
        let s = ScenarioFile::parse("[sweep]\nstrategies = [\"centralized\", \"trails\"]\nseeds = [7]\n").unwrap();
        assert_eq!(s.sweep.strategies[1], Strategy::Protocols { notification: false, trails: true });
    }
}
