//! Trails of entities.
//!
//! Every node keeps, per outgoing link and per cell type, a float recording
//! how recently and how often checkers of that type left through the link.
//! Departures raise the value exponentially, each timestep lowers it
//! linearly to zero, and a departing checker favours links with low values
//! through an integer roulette.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::CellTypeId;
use crate::topology::{LinkId, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrailParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub v_max: f64,
    pub exp_arg_cap: f64,
}

impl Default for TrailParams {
    fn default() -> Self {
        TrailParams {
            c1: 10.0,
            c2: 0.001,
            c3: 2.0,
            v_max: 1000.0,
            exp_arg_cap: 30.0,
        }
    }
}

impl TrailParams {
    pub fn is_valid(&self) -> bool {
        self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0 && self.v_max > 0.0 && self.exp_arg_cap > 0.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrailError {
    #[error("node {0} has no links to choose from")]
    IsolatedNode(NodeId),
    #[error("link {link} does not leave node {node}")]
    ForeignLink { node: NodeId, link: LinkId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("cell type {0} outside the table's type range")]
    UnknownType(CellTypeId),
}

/// `min(c1 + c2 * e^min(old, cap), v_max)`.
pub fn trail_increase(old: f64, params: &TrailParams) -> f64 {
    (params.c1 + params.c2 * old.min(params.exp_arg_cap).exp()).min(params.v_max)
}

/// `max(0, old - c3)`.
pub fn trail_decay(old: f64, c3: f64) -> f64 {
    (old - c3).max(0.0)
}

/// Integer roulette weights: `ceil(max(1, v_top + 1 - v))` where `v_top` is
/// the largest value among the candidates.
pub fn roulette_weights(values: &[f64]) -> Vec<u64> {
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    values
        .iter()
        .map(|&v| (top + 1.0 - v).max(1.0).ceil() as u64)
        .collect()
}

/// Index whose interval contains `draw`, intervals laid out as
/// `[1, w0], [w0+1, w0+w1], ...`. `draw` must be in `1..=sum(weights)`.
pub fn roulette_pick(weights: &[u64], draw: u64) -> usize {
    let mut upper = 0;
    for (i, &w) in weights.iter().enumerate() {
        upper += w;
        if draw <= upper {
            return i;
        }
    }
    weights.len() - 1
}

/// Per-node trail storage for every (outgoing link, cell type) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailTable {
    types: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
    bridge_fallback: Vec<bool>,
    decay_override: Vec<Option<f64>>,
}

impl TrailTable {
    pub fn new(topology: &Topology, types: usize) -> TrailTable {
        let n = topology.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for node in topology.nodes() {
            offsets.push(acc);
            acc += topology.degree(node);
        }
        offsets.push(acc);
        TrailTable {
            types,
            offsets,
            values: vec![0.0; acc * types],
            bridge_fallback: vec![false; n],
            decay_override: vec![None; n],
        }
    }

    pub fn types(&self) -> usize {
        self.types
    }

    fn idx(&self, node: NodeId, slot: usize, ty: CellTypeId) -> usize {
        (self.offsets[node.index()] + slot) * self.types + ty.index()
    }

    fn check(&self, node: NodeId, ty: CellTypeId) -> Result<(), TrailError> {
        if node.index() + 1 >= self.offsets.len() {
            return Err(TrailError::UnknownNode(node));
        }
        if ty.0 == 0 || ty.index() >= self.types {
            return Err(TrailError::UnknownType(ty));
        }
        Ok(())
    }

    /// Trail value on `link` leaving `node` for type `ty`.
    pub fn value(&self, topology: &Topology, node: NodeId, link: LinkId, ty: CellTypeId) -> Result<f64, TrailError> {
        self.check(node, ty)?;
        let slot = topology
            .slot_of(node, link)
            .ok_or(TrailError::ForeignLink { node, link })?;
        Ok(self.values[self.idx(node, slot, ty)])
    }

    /// Values for `ty` on `node`'s links, in adjacency order.
    pub fn values_at(&self, node: NodeId, ty: CellTypeId) -> Vec<f64> {
        let degree = self.offsets[node.index() + 1] - self.offsets[node.index()];
        (0..degree).map(|s| self.values[self.idx(node, s, ty)]).collect()
    }

    pub fn set_value(&mut self, topology: &Topology, node: NodeId, link: LinkId, ty: CellTypeId, value: f64) -> Result<(), TrailError> {
        self.check(node, ty)?;
        let slot = topology
            .slot_of(node, link)
            .ok_or(TrailError::ForeignLink { node, link })?;
        let i = self.idx(node, slot, ty);
        self.values[i] = value.max(0.0);
        Ok(())
    }

    pub fn set_bridge_fallback(&mut self, node: NodeId, enabled: bool) {
        self.bridge_fallback[node.index()] = enabled;
    }

    pub fn bridge_fallback(&self, node: NodeId) -> bool {
        self.bridge_fallback[node.index()]
    }

    /// Replaces `c3` on one node's links.
    pub fn set_decay_override(&mut self, node: NodeId, c3: Option<f64>) {
        self.decay_override[node.index()] = c3;
    }

    /// Applies one timestep of linear decay to every entry.
    pub fn decay_all(&mut self, params: &TrailParams) {
        for node in 0..self.offsets.len() - 1 {
            let c3 = self.decay_override[node].unwrap_or(params.c3);
            let range = self.offsets[node] * self.types..self.offsets[node + 1] * self.types;
            for v in &mut self.values[range] {
                if *v > 0.0 {
                    *v = trail_decay(*v, c3);
                }
            }
        }
    }

    /// A checker of type `ty` finished at `node` and leaves through `link`.
    pub fn record_traversal(
        &mut self,
        topology: &Topology,
        node: NodeId,
        link: LinkId,
        ty: CellTypeId,
        params: &TrailParams,
    ) -> Result<(), TrailError> {
        self.check(node, ty)?;
        let slot = topology
            .slot_of(node, link)
            .ok_or(TrailError::ForeignLink { node, link })?;
        let i = self.idx(node, slot, ty);
        self.values[i] = trail_increase(self.values[i], params);
        Ok(())
    }

    /// Picks the link a checker of type `ty` leaves `node` through.
    pub fn select_next_hop<R: Rng + ?Sized>(
        &self,
        topology: &Topology,
        node: NodeId,
        ty: CellTypeId,
        rng: &mut R,
    ) -> Result<LinkId, TrailError> {
        self.check(node, ty)?;
        let links = topology.adj(node);
        if links.is_empty() {
            return Err(TrailError::IsolatedNode(node));
        }
        if self.bridge_fallback[node.index()] {
            return Ok(links[rng.random_range(0..links.len())].0);
        }
        let weights = roulette_weights(&self.values_at(node, ty));
        let total: u64 = weights.iter().sum();
        let draw = rng.random_range(1..=total);
        Ok(links[roulette_pick(&weights, draw)].0)
    }

    /// Nonzero entries as `(node, link, type, value)`, in node, link, type
    /// order.
    pub fn nonzero_entries<'a>(&'a self, topology: &'a Topology) -> impl Iterator<Item = (NodeId, LinkId, CellTypeId, f64)> + 'a {
        topology.nodes().flat_map(move |node| {
            topology.adj(node).iter().enumerate().flat_map(move |(slot, &(link, _))| {
                (0..self.types).filter_map(move |t| {
                    let ty = CellTypeId(t as u16 + 1);
                    let v = self.values[self.idx(node, slot, ty)];
                    (v > 0.0).then_some((node, link, ty, v))
                })
            })
        })
    }
}
