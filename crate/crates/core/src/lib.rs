//! Simulation of artificial cells protecting a computer network.
//!
//! Packet checkers inspect traffic passing their node and are steered by
//! deficiency notifications; node checkers scan nodes for infections and
//! are steered by per-type trails left on connections.

pub mod config;
pub mod engine;
pub mod entity;
pub mod metrics;
pub mod notify;
pub mod rng;
pub mod scenario;
pub mod threat;
pub mod topology;
pub mod trails;

pub use config::{ConfigError, SimulationConfig, Strategy};
pub use engine::{centralized_assign, run, Simulation};
pub use metrics::MetricsReport;
pub use scenario::{ScenarioError, ScenarioFile};
pub use topology::{generate_topology, LinkId, NodeId, NodeRole, Topology, TopologyConfig};
