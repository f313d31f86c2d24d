//! Simulation configuration and validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{CellKind, CellTypeId, MovementParams};
use crate::notify::NotifyParams;
use crate::threat::TrafficConfig;
use crate::topology::{NodeId, TopologyConfig, TopologyError};
use crate::trails::TrailParams;

/// A configuration problem, tagged with the dotted key it concerns.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<TopologyError> for ConfigError {
    fn from(e: TopologyError) -> Self {
        let key = match &e {
            TopologyError::TooFewNodes(_) | TopologyError::RoleMixUnsatisfiable { .. } => "topology.node_count",
            TopologyError::BadFragmentCount { .. } => "topology.fragment_count",
            TopologyError::NoBridges | TopologyError::TooManyBridges(..) => "topology.bridges_per_fragment_pair",
            TopologyError::FractionOutOfRange(_) | TopologyError::FractionSum(_) => "topology.role_mix",
            _ => "topology",
        };
        ConfigError::new(key, e.to_string())
    }
}

/// How packet checkers are managed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Random moves with the base probability, no information.
    Uninformed,
    /// An omniscient manager teleports surplus packet checkers to deficits.
    Centralized,
    /// Local protocols; either may be switched off.
    Protocols { notification: bool, trails: bool },
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Uninformed => "uninformed",
            Strategy::Centralized => "centralized",
            Strategy::Protocols {
                notification: true,
                trails: true,
            } => "protocols",
            Strategy::Protocols {
                notification: true,
                trails: false,
            } => "notification",
            Strategy::Protocols {
                notification: false,
                trails: true,
            } => "trails",
            Strategy::Protocols {
                notification: false,
                trails: false,
            } => "protocols-off",
        }
    }

    pub fn notification(self) -> bool {
        matches!(self, Strategy::Protocols { notification: true, .. })
    }

    pub fn trails(self) -> bool {
        matches!(self, Strategy::Protocols { trails: true, .. })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let proto = |notification, trails| Strategy::Protocols { notification, trails };
        Ok(match s {
            "uninformed" => Strategy::Uninformed,
            "centralized" => Strategy::Centralized,
            "protocols" => proto(true, true),
            "notification" => proto(true, false),
            "trails" => proto(false, true),
            "protocols-off" => proto(false, false),
            other => {
                return Err(format!(
                    "unknown strategy `{other}` (expected uninformed, centralized, notification, trails or protocols)"
                ))
            }
        })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Initial placement of one kind of cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Cell `i` of the kind starts on node `(offset + i) % N`, continuing the
    /// id sequence across kinds.
    #[default]
    RoundRobin,
    /// Every cell of the kind starts on one node.
    Node(NodeId),
    /// Round-robin over the nodes of one generated fragment.
    Fragment(u32),
}

/// Which rule keeps packet checkers in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinningRule {
    /// A checker stays if its departure would leave the node below its
    /// required security.
    #[default]
    Departure,
    /// A checker stays only while the node is already below its required
    /// security.
    Deficient,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeFallback {
    #[default]
    Off,
    /// Enable uniform selection on both endpoints of every generated
    /// inter-fragment link.
    FragmentBridges,
    Nodes(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellCountOverride {
    pub cell_type: CellTypeId,
    pub kind: CellKind,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    /// Number of intrusion types, and therefore of cell types.
    pub intrusion_types: u16,
    pub packet_checkers_per_type: u32,
    pub node_checkers_per_type: u32,
    pub sec_value: f64,
    #[serde(rename = "count_override")]
    pub overrides: Vec<CellCountOverride>,
    pub packet_checker_placement: Placement,
    pub node_checker_placement: Placement,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            intrusion_types: 60,
            packet_checkers_per_type: 70,
            node_checkers_per_type: 1,
            sec_value: 1.0,
            overrides: Vec::new(),
            packet_checker_placement: Placement::RoundRobin,
            node_checker_placement: Placement::RoundRobin,
        }
    }
}

impl CellConfig {
    pub fn count(&self, ty: CellTypeId, kind: CellKind) -> u32 {
        self.overrides
            .iter()
            .rev()
            .find(|o| o.cell_type == ty && o.kind == kind)
            .map(|o| o.count)
            .unwrap_or(match kind {
                CellKind::PacketChecker => self.packet_checkers_per_type,
                CellKind::NodeChecker => self.node_checkers_per_type,
            })
    }

    pub fn total(&self, kind: CellKind) -> u64 {
        (1..=self.intrusion_types)
            .map(|t| self.count(CellTypeId(t), kind) as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinSecOverride {
    pub node: NodeId,
    pub min_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecurityConfig {
    pub min_sec: f64,
    #[serde(rename = "min_sec_override")]
    pub overrides: Vec<MinSecOverride>,
    pub pinning: PinningRule,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        SecurityConfig {
            min_sec: 20.0,
            overrides: Vec::new(),
            pinning: PinningRule::Departure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayOverride {
    pub node: NodeId,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrailsConfig {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub v_max: f64,
    pub exp_arg_cap: f64,
    /// Also refresh the trail back towards the node a checker came from,
    /// on arrival. Departure updates always happen.
    pub mark_arrival: bool,
    pub bridge_fallback: BridgeFallback,
    #[serde(rename = "decay_override")]
    pub decay_overrides: Vec<DecayOverride>,
}

impl Default for TrailsConfig {
    fn default() -> Self {
        TrailsConfig::from_params(TrailParams::default())
    }
}

impl TrailsConfig {
    pub fn from_params(p: TrailParams) -> TrailsConfig {
        TrailsConfig {
            c1: p.c1,
            c2: p.c2,
            c3: p.c3,
            v_max: p.v_max,
            exp_arg_cap: p.exp_arg_cap,
            mark_arrival: false,
            bridge_fallback: BridgeFallback::Off,
            decay_overrides: Vec::new(),
        }
    }

    pub fn params(&self) -> TrailParams {
        TrailParams {
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            v_max: self.v_max,
            exp_arg_cap: self.exp_arg_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub duration: u64,
    pub seed: u64,
    /// Coverage window in timesteps; derived from the node and node-checker
    /// counts when absent.
    pub coverage_window: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Protocols {
                notification: true,
                trails: true,
            },
            duration: 5000,
            seed: 1,
            coverage_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub topology: TopologyConfig,
    pub cells: CellConfig,
    pub security: SecurityConfig,
    pub movement: MovementParams,
    pub trails: TrailsConfig,
    pub notification: NotifyParams,
    pub traffic: TrafficConfig,
    pub run: RunConfig,
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be a non-negative number (got {v})")))
    }
}

impl SimulationConfig {
    /// Checks every invariant that does not need the generated topology.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate()?;
        if self.run.duration < 1 {
            return Err(ConfigError::new("run.duration", "must be at least 1"));
        }
        if self.run.coverage_window == Some(0) {
            return Err(ConfigError::new("run.coverage_window", "must be at least 1"));
        }
        if self.cells.intrusion_types == 0 {
            return Err(ConfigError::new("cells.intrusion_types", "must be at least 1"));
        }
        non_negative("cells.sec_value", self.cells.sec_value)?;
        for o in &self.cells.overrides {
            if o.cell_type.0 == 0 || o.cell_type.0 > self.cells.intrusion_types {
                return Err(ConfigError::new(
                    "cells.count_override.cell_type",
                    format!("type {} outside 1..={}", o.cell_type, self.cells.intrusion_types),
                ));
            }
        }
        non_negative("security.min_sec", self.security.min_sec)?;
        for o in &self.security.overrides {
            non_negative("security.min_sec_override.min_sec", o.min_sec)?;
        }
        let m = &self.movement;
        for (key, v) in [("movement.p_base", m.p_base), ("movement.p_max", m.p_max)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::new(key, format!("must be a probability in [0, 1] (got {v})")));
            }
        }
        non_negative("movement.alpha", m.alpha)?;
        if !m.is_valid() {
            return Err(ConfigError::new("movement.p_max", "must satisfy p_base <= p_max <= 1"));
        }
        let tp = self.trails.params();
        for (key, v) in [
            ("trails.c1", tp.c1),
            ("trails.c2", tp.c2),
            ("trails.c3", tp.c3),
            ("trails.v_max", tp.v_max),
            ("trails.exp_arg_cap", tp.exp_arg_cap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::new(key, format!("must be positive (got {v})")));
            }
        }
        for o in &self.trails.decay_overrides {
            if !(o.c3.is_finite() && o.c3 > 0.0) {
                return Err(ConfigError::new("trails.decay_override.c3", format!("must be positive (got {})", o.c3)));
            }
        }
        if !self.notification.threshold.is_finite() {
            return Err(ConfigError::new("notification.threshold", "must be finite"));
        }
        if let Some(field) = self.traffic.invalid_field() {
            return Err(ConfigError::new(format!("traffic.{field}"), "out of range"));
        }
        Ok(())
    }
}
