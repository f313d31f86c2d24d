//! Artificial cells: security contribution, the move-probability curve and
//! the per-step movement decision.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::notify::NotificationPacket;
use crate::topology::{LinkId, NodeId, Topology};
use crate::trails::TrailTable;

/// Cell type `1..=K`; each type recognises exactly one intrusion type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellTypeId(pub u16);

impl CellTypeId {
    /// Zero-based index for table lookups.
    pub fn index(self) -> usize {
        debug_assert!(self.0 >= 1);
        (self.0 - 1) as usize
    }
}

impl fmt::Display for CellTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Inspects traffic at its node; steered by deficiency notifications.
    PacketChecker,
    /// Inspects its node for infections, then moves on; steered by trails.
    NodeChecker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MovementParams {
    pub p_base: f64,
    pub alpha: f64,
    pub p_max: f64,
}

impl Default for MovementParams {
    fn default() -> Self {
        MovementParams {
            p_base: 0.1,
            alpha: 0.05,
            p_max: 0.8,
        }
    }
}

impl MovementParams {
    pub fn is_valid(&self) -> bool {
        0.0 <= self.p_base && self.p_base <= self.p_max && self.p_max <= 1.0 && self.alpha >= 0.0
    }
}

/// The link a packet checker last followed in response to a notification
/// and the lacking-security value that drew it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedTarget {
    pub link: LinkId,
    pub urgency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u32,
    pub cell_type: CellTypeId,
    pub kind: CellKind,
    pub location: NodeId,
    pub sec_value: f64,
    pub directed_target: Option<DirectedTarget>,
}

impl Cell {
    pub fn new(id: u32, cell_type: CellTypeId, kind: CellKind, location: NodeId) -> Cell {
        Cell {
            id,
            cell_type,
            kind,
            location,
            sec_value: 1.0,
            directed_target: None,
        }
    }
}

/// Security a node sees from its residents: packet checkers only.
pub fn node_security<'a>(residents: impl IntoIterator<Item = &'a Cell>) -> f64 {
    residents
        .into_iter()
        .filter(|c| c.kind == CellKind::PacketChecker)
        .map(|c| c.sec_value)
        .sum()
}

/// Clamped-linear response curve: `min(p_base + alpha * lacking, p_max)`.
pub fn movement_probability(params: &MovementParams, lacking: f64) -> f64 {
    (params.p_base + params.alpha * lacking.max(0.0)).min(params.p_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Stay,
    Move(LinkId),
}

/// Trail state a node checker consults at its node.
#[derive(Debug, Clone, Copy)]
pub struct TrailView<'a> {
    pub table: &'a TrailTable,
}

/// One cell's decision for this timestep.
///
/// `here_lacking` is the security shortfall the cell's node reports to it;
/// `best_notification` is the strongest deficiency notice that reached the
/// node this step.
pub fn decide_move<R: Rng + ?Sized>(
    cell: &Cell,
    topology: &Topology,
    params: &MovementParams,
    here_lacking: f64,
    best_notification: Option<&NotificationPacket>,
    trail_view: Option<TrailView<'_>>,
    rng: &mut R,
) -> Move {
    let neighbors = topology.adj(cell.location);
    if neighbors.is_empty() {
        return Move::Stay;
    }
    match cell.kind {
        CellKind::PacketChecker => {
            if here_lacking > 0.0 {
                return Move::Stay;
            }
            let urgency = best_notification.map_or(0.0, |p| p.value);
            if !rng.random_bool(movement_probability(params, urgency)) {
                return Move::Stay;
            }
            match best_notification.and_then(|p| p.arrival) {
                Some(link) => Move::Move(link),
                None => Move::Move(neighbors[rng.random_range(0..neighbors.len())].0),
            }
        }
        CellKind::NodeChecker => match trail_view {
            Some(view) => view
                .table
                .select_next_hop(topology, cell.location, cell.cell_type, rng)
                .map_or(Move::Stay, Move::Move),
            None => Move::Move(neighbors[rng.random_range(0..neighbors.len())].0),
        },
    }
}
