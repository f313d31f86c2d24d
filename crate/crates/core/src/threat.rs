//! Intrusion and traffic model.
//!
//! External packets enter at the gateway and travel hop by hop to an end
//! host; internal attacks appear directly on a host. Every packet is shown
//! to the packet checkers at each node it visits, and an intrusion that
//! reaches its destination unseen installs an infection there for node
//! checkers to find later.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::entity::{Cell, CellKind, CellTypeId};
use crate::topology::{path_from_parents, NodeId, NodeRole, Topology};

/// Intrusion types map one-to-one onto cell types.
pub type IntrusionTypeId = CellTypeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Packets entering through the gateway each step.
    pub packets_per_step: u32,
    pub infection_probability_per_packet: f64,
    /// Mean number of intrusions launched directly on hosts per step.
    pub internal_attack_rate: f64,
    /// Mean number of infections appearing on hosts per step without any
    /// packet to intercept.
    pub infections_per_step: f64,
    /// Zipf exponent over intrusion types; 0 means uniform.
    pub type_skew: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            packets_per_step: 5,
            infection_probability_per_packet: 0.02,
            internal_attack_rate: 2.0,
            infections_per_step: 0.05,
            type_skew: 0.0,
        }
    }
}

impl TrafficConfig {
    /// Name of the first invalid field, if any.
    pub fn invalid_field(&self) -> Option<&'static str> {
        if !(0.0..=1.0).contains(&self.infection_probability_per_packet) {
            return Some("infection_probability_per_packet");
        }
        if !(self.internal_attack_rate >= 0.0 && self.internal_attack_rate.is_finite()) {
            return Some("internal_attack_rate");
        }
        if !(self.infections_per_step >= 0.0 && self.infections_per_step.is_finite()) {
            return Some("infections_per_step");
        }
        if !(self.type_skew >= 0.0 && self.type_skew.is_finite()) {
            return Some("type_skew");
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketSource {
    External,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPacket {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub path: Vec<NodeId>,
    pub position: usize,
    pub payload: Option<IntrusionTypeId>,
    pub origin: PacketSource,
}

impl TrafficPacket {
    pub fn current(&self) -> NodeId {
        self.path[self.position]
    }

    pub fn at_destination(&self) -> bool {
        self.position + 1 == self.path.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infection {
    pub node: NodeId,
    pub intrusion: IntrusionTypeId,
    pub installed_at: u64,
}

/// Answers whether a packet checker of a given type sits at a node.
pub trait ResidentView {
    fn guards(&self, node: NodeId, intrusion: IntrusionTypeId) -> bool;
}

impl ResidentView for [Cell] {
    fn guards(&self, node: NodeId, intrusion: IntrusionTypeId) -> bool {
        self.iter()
            .any(|c| c.location == node && c.kind == CellKind::PacketChecker && c.cell_type == intrusion)
    }
}

/// Count of packet checkers per (node, type), rebuilt after movement.
#[derive(Debug, Clone)]
pub struct PresenceIndex {
    types: usize,
    counts: Vec<u32>,
}

impl PresenceIndex {
    pub fn new(nodes: usize, types: usize) -> PresenceIndex {
        PresenceIndex {
            types,
            counts: vec![0; nodes * types],
        }
    }

    pub fn rebuild(&mut self, cells: &[Cell]) {
        self.counts.fill(0);
        for c in cells.iter().filter(|c| c.kind == CellKind::PacketChecker) {
            self.counts[c.location.index() * self.types + c.cell_type.index()] += 1;
        }
    }
}

impl ResidentView for PresenceIndex {
    fn guards(&self, node: NodeId, intrusion: IntrusionTypeId) -> bool {
        self.counts[node.index() * self.types + intrusion.index()] > 0
    }
}

/// Active infections, at most one per (node, intrusion type).
#[derive(Debug, Clone, Default)]
pub struct InfectionRegistry {
    active: BTreeMap<(NodeId, IntrusionTypeId), u64>,
    created: u64,
    cleared: u64,
}

impl InfectionRegistry {
    /// Installs an infection unless one of the same type is already active.
    pub fn install(&mut self, node: NodeId, intrusion: IntrusionTypeId, t: u64) -> Option<Infection> {
        if self.active.contains_key(&(node, intrusion)) {
            return None;
        }
        self.active.insert((node, intrusion), t);
        self.created += 1;
        Some(Infection {
            node,
            intrusion,
            installed_at: t,
        })
    }

    pub fn clear(&mut self, node: NodeId, intrusion: IntrusionTypeId) -> Option<Infection> {
        let installed_at = self.active.remove(&(node, intrusion))?;
        self.cleared += 1;
        Some(Infection {
            node,
            intrusion,
            installed_at,
        })
    }

    pub fn is_infected(&self, node: NodeId, intrusion: IntrusionTypeId) -> bool {
        self.active.contains_key(&(node, intrusion))
    }

    pub fn active_count(&self) -> u64 {
        self.active.len() as u64
    }

    pub fn created(&self) -> u64 {
        self.created
    }

    pub fn cleared(&self) -> u64 {
        self.cleared
    }
}

/// Cached BFS routes from packet sources.
#[derive(Debug, Clone, Default)]
pub struct Routes {
    parents: BTreeMap<NodeId, Vec<Option<NodeId>>>,
}

impl Routes {
    pub fn path(&mut self, topology: &Topology, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let parents = self
            .parents
            .entry(src)
            .or_insert_with(|| topology.bfs_parents(src));
        path_from_parents(parents, src, dst)
    }
}

fn targets(topology: &Topology) -> Vec<NodeId> {
    let hosts = topology.hosts();
    if hosts.is_empty() {
        topology
            .nodes()
            .filter(|&n| topology.role(n) != NodeRole::Gateway)
            .collect()
    } else {
        hosts
    }
}

fn sample_type<R: Rng + ?Sized>(config: &TrafficConfig, types: u16, rng: &mut R) -> IntrusionTypeId {
    if config.type_skew == 0.0 {
        return CellTypeId(rng.random_range(1..=types));
    }
    let weights: Vec<f64> = (1..=types).map(|t| (t as f64).powf(-config.type_skew)).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return CellTypeId(i as u16 + 1);
        }
        x -= w;
    }
    CellTypeId(types)
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |d| d.sample(rng) as u64)
}

/// New packets for one timestep. `rng` should be the per-step traffic
/// stream so the result depends only on the seed and `t`.
pub fn generate_traffic<R: Rng + ?Sized>(
    config: &TrafficConfig,
    topology: &Topology,
    routes: &mut Routes,
    types: u16,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<TrafficPacket> {
    let mut out = Vec::new();
    let targets = targets(topology);
    let gateways: Vec<NodeId> = topology.gateways().collect();

    if !gateways.is_empty() {
        for _ in 0..config.packets_per_step {
            let src = gateways[rng.random_range(0..gateways.len())];
            let candidates: Vec<NodeId> = targets.iter().copied().filter(|&n| n != src).collect();
            if candidates.is_empty() {
                break;
            }
            let dst = candidates[rng.random_range(0..candidates.len())];
            let infected = rng.random_bool(config.infection_probability_per_packet);
            let payload = infected.then(|| sample_type(config, types, rng));
            let Some(path) = routes.path(topology, src, dst) else {
                continue;
            };
            out.push(TrafficPacket {
                id: *next_id,
                source: src,
                destination: dst,
                path,
                position: 0,
                payload,
                origin: PacketSource::External,
            });
            *next_id += 1;
        }
    }

    if !targets.is_empty() {
        for _ in 0..poisson(config.internal_attack_rate, rng) {
            let node = targets[rng.random_range(0..targets.len())];
            let payload = Some(sample_type(config, types, rng));
            out.push(TrafficPacket {
                id: *next_id,
                source: node,
                destination: node,
                path: vec![node],
                position: 0,
                payload,
                origin: PacketSource::Internal,
            });
            *next_id += 1;
        }
    }
    out
}

/// Infections that appear on hosts without passing any checkpoint.
pub fn generate_direct_infections<R: Rng + ?Sized>(
    config: &TrafficConfig,
    topology: &Topology,
    types: u16,
    rng: &mut R,
) -> Vec<(NodeId, IntrusionTypeId)> {
    let targets = targets(topology);
    if targets.is_empty() {
        return Vec::new();
    }
    (0..poisson(config.infections_per_step, rng))
        .map(|_| {
            let node = targets[rng.random_range(0..targets.len())];
            (node, sample_type(config, types, rng))
        })
        .collect()
}

/// True when the packet carries an intrusion a resident packet checker
/// recognises.
pub fn inspect_packet<V: ResidentView + ?Sized>(packet: &TrafficPacket, residents: &V) -> bool {
    packet
        .payload
        .is_some_and(|ty| residents.guards(packet.current(), ty))
}

/// Resolves an undetected packet at its destination.
pub fn packet_delivery_outcome(
    packet: &TrafficPacket,
    registry: &mut InfectionRegistry,
    t: u64,
) -> Option<Infection> {
    let ty = packet.payload?;
    registry.install(packet.destination, ty, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckEvent {
    pub node: NodeId,
    pub cell_type: CellTypeId,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCheck {
    pub event: CheckEvent,
    pub cleared: Vec<Infection>,
}

/// A node checker inspects its current node.
pub fn check_node(cell: &Cell, registry: &mut InfectionRegistry, t: u64) -> NodeCheck {
    debug_assert_eq!(cell.kind, CellKind::NodeChecker);
    NodeCheck {
        event: CheckEvent {
            node: cell.location,
            cell_type: cell.cell_type,
            t,
        },
        cleared: registry.clear(cell.location, cell.cell_type).into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketFate {
    Detected,
    Infected,
    Delivered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub t: u64,
    pub packet: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub intrusion: Option<IntrusionTypeId>,
    pub fate: PacketFate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficStep {
    pub generated: u64,
    pub intrusions: u64,
    pub detected: u64,
    pub delivered: u64,
    pub infections: u64,
}

/// Packets currently travelling through the network.
#[derive(Debug, Clone, Default)]
pub struct TrafficState {
    in_flight: Vec<TrafficPacket>,
    next_id: u64,
    routes: Routes,
}

impl TrafficState {
    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Advances packets one hop, injects `t`'s new packets, and inspects
    /// every packet at its current node.
    pub fn step<R: Rng + ?Sized, V: ResidentView + ?Sized>(
        &mut self,
        config: &TrafficConfig,
        topology: &Topology,
        types: u16,
        residents: &V,
        registry: &mut InfectionRegistry,
        t: u64,
        rng: &mut R,
        mut log: Option<&mut Vec<TrafficRecord>>,
    ) -> TrafficStep {
        for p in &mut self.in_flight {
            p.position += 1;
        }
        let fresh = generate_traffic(config, topology, &mut self.routes, types, &mut self.next_id, rng);
        let mut out = TrafficStep {
            generated: fresh.len() as u64,
            intrusions: fresh.iter().filter(|p| p.payload.is_some()).count() as u64,
            ..Default::default()
        };
        self.in_flight.extend(fresh);

        let mut record = |p: &TrafficPacket, fate| {
            if let Some(log) = log.as_deref_mut() {
                log.push(TrafficRecord {
                    t,
                    packet: p.id,
                    source: p.source,
                    destination: p.destination,
                    intrusion: p.payload,
                    fate,
                });
            }
        };
        let mut kept = Vec::with_capacity(self.in_flight.len());
        for p in self.in_flight.drain(..) {
            if inspect_packet(&p, residents) {
                out.detected += 1;
                record(&p, PacketFate::Detected);
            } else if p.at_destination() {
                out.delivered += 1;
                if packet_delivery_outcome(&p, registry, t).is_some() {
                    out.infections += 1;
                }
                let fate = if p.payload.is_some() {
                    PacketFate::Infected
                } else {
                    PacketFate::Delivered
                };
                record(&p, fate);
            } else {
                kept.push(p);
            }
        }
        self.in_flight = kept;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_at, Stream};
    use crate::topology::{generate_topology, TopologyConfig};

    fn topo() -> Topology {
        generate_topology(&TopologyConfig::default(), 3).unwrap()
    }

    fn cfg(packets: u32, p: f64) -> TrafficConfig {
        TrafficConfig {
            packets_per_step: packets,
            infection_probability_per_packet: p,
            internal_attack_rate: 0.0,
            infections_per_step: 0.0,
            type_skew: 0.0,
        }
    }

    fn packet(node: u32, payload: Option<u16>) -> TrafficPacket {
        TrafficPacket {
            id: 0,
            source: NodeId(node),
            destination: NodeId(node),
            path: vec![NodeId(node)],
            position: 0,
            payload: payload.map(CellTypeId),
            origin: PacketSource::Internal,
        }
    }

    #[test]
    fn zero_rate_generates_nothing() {
        let t = topo();
        let mut rng = stream_at(1, Stream::Traffic, 0);
        let out = generate_traffic(&cfg(0, 0.5), &t, &mut Routes::default(), 60, &mut 0, &mut rng);
        assert!(out.is_empty());
    }

    #[test]
    fn certain_infection_marks_every_packet() {
        let t = topo();
        let mut rng = stream_at(1, Stream::Traffic, 0);
        let out = generate_traffic(&cfg(500, 1.0), &t, &mut Routes::default(), 60, &mut 0, &mut rng);
        assert_eq!(out.len(), 500);
        assert!(out.iter().all(|p| p.payload.is_some()));
        for p in &out {
            assert_eq!(t.role(p.source), NodeRole::Gateway);
            assert!(t.role(p.destination).is_host());
            assert_eq!(p.path.first(), Some(&p.source));
            assert_eq!(p.path.last(), Some(&p.destination));
            for w in p.path.windows(2) {
                assert!(t.adj(w[0]).iter().any(|&(_, nb)| nb == w[1]));
            }
        }
    }

    #[test]
    fn infected_fraction_tracks_probability() {
        let t = topo();
        let mut rng = stream_at(9, Stream::Traffic, 0);
        let out = generate_traffic(&cfg(100_000, 0.3), &t, &mut Routes::default(), 60, &mut 0, &mut rng);
        let frac = out.iter().filter(|p| p.payload.is_some()).count() as f64 / out.len() as f64;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn generation_is_a_function_of_seed_and_step() {
        let t = topo();
        let c = TrafficConfig::default();
        let run = |seed, step| {
            let mut rng = stream_at(seed, Stream::Traffic, step);
            generate_traffic(&c, &t, &mut Routes::default(), 60, &mut 0, &mut rng)
        };
        assert_eq!(run(4, 10), run(4, 10));
        assert_ne!(run(4, 10), run(4, 11));
    }

    #[test]
    fn inspection_requires_matching_packet_checker() {
        let mut cells = vec![Cell::new(0, CellTypeId(7), CellKind::PacketChecker, NodeId(2))];
        assert!(inspect_packet(&packet(2, Some(7)), cells.as_slice()));
        assert!(!inspect_packet(&packet(2, None), cells.as_slice()));
        cells[0].cell_type = CellTypeId(8);
        assert!(!inspect_packet(&packet(2, Some(7)), cells.as_slice()));

        let others: Vec<Cell> = (1..=60u16)
            .filter(|&t| t != 7)
            .map(|t| Cell::new(t as u32, CellTypeId(t), CellKind::PacketChecker, NodeId(2)))
            .collect();
        assert!(!inspect_packet(&packet(2, Some(7)), others.as_slice()));
        let node_checker = vec![Cell::new(0, CellTypeId(7), CellKind::NodeChecker, NodeId(2))];
        assert!(!inspect_packet(&packet(2, Some(7)), node_checker.as_slice()));

        let mut index = PresenceIndex::new(3, 60);
        index.rebuild(&others);
        assert!(!index.guards(NodeId(2), CellTypeId(7)));
        assert!(index.guards(NodeId(2), CellTypeId(8)));
    }

    #[test]
    fn delivery_installs_once() {
        let mut reg = InfectionRegistry::default();
        let p = packet(4, Some(3));
        assert!(packet_delivery_outcome(&p, &mut reg, 1).is_some());
        assert!(packet_delivery_outcome(&p, &mut reg, 2).is_none());
        assert_eq!(reg.active_count(), 1);
        assert_eq!(reg.created(), 1);
        assert!(packet_delivery_outcome(&packet(4, None), &mut reg, 3).is_none());
    }

    #[test]
    fn matching_cell_at_destination_prevents_infection() {
        let t = Topology::from_edges(vec![NodeRole::Gateway, NodeRole::Workstation], &[(NodeId(0), NodeId(1))]).unwrap();
        let cfg = TrafficConfig {
            packets_per_step: 0,
            internal_attack_rate: 50.0,
            infection_probability_per_packet: 0.0,
            infections_per_step: 0.0,
            type_skew: 0.0,
        };
        let cells: Vec<Cell> = (1..=3u16)
            .map(|ty| Cell::new(ty as u32, CellTypeId(ty), CellKind::PacketChecker, NodeId(1)))
            .collect();
        let mut state = TrafficState::default();
        let mut reg = InfectionRegistry::default();
        let mut rng = stream_at(0, Stream::Traffic, 0);
        let step = state.step(&cfg, &t, 3, cells.as_slice(), &mut reg, 0, &mut rng, None);
        assert!(step.generated > 0);
        assert_eq!(step.detected, step.generated);
        assert_eq!(reg.created(), 0);
    }

    #[test]
    fn check_clears_matching_type_only() {
        let mut reg = InfectionRegistry::default();
        reg.install(NodeId(5), CellTypeId(3), 0);
        reg.install(NodeId(5), CellTypeId(9), 0);
        let checker = Cell::new(0, CellTypeId(3), CellKind::NodeChecker, NodeId(5));
        let first = check_node(&checker, &mut reg, 10);
        assert_eq!(first.cleared.len(), 1);
        assert_eq!(first.cleared[0].intrusion, CellTypeId(3));
        assert!(reg.is_infected(NodeId(5), CellTypeId(9)));
        let second = check_node(&checker, &mut reg, 10);
        assert!(second.cleared.is_empty());
        assert_eq!(second.event, CheckEvent { node: NodeId(5), cell_type: CellTypeId(3), t: 10 });

        let clean = Cell::new(1, CellTypeId(1), CellKind::NodeChecker, NodeId(6));
        assert!(check_node(&clean, &mut reg, 11).cleared.is_empty());
        assert_eq!(reg.created(), reg.cleared() + reg.active_count());
    }

    #[test]
    fn packets_are_conserved_each_step() {
        let t = topo();
        let cfg = TrafficConfig {
            packets_per_step: 20,
            infection_probability_per_packet: 0.5,
            ..Default::default()
        };
        let cells: Vec<Cell> = (0..400u32)
            .map(|i| Cell::new(i, CellTypeId((i % 60) as u16 + 1), CellKind::PacketChecker, NodeId(i % 200)))
            .collect();
        let mut state = TrafficState::default();
        let mut reg = InfectionRegistry::default();
        for step in 0..200 {
            let before = state.in_flight() as u64;
            let mut rng = stream_at(5, Stream::Traffic, step);
            let s = state.step(&cfg, &t, 60, cells.as_slice(), &mut reg, step, &mut rng, None);
            assert_eq!(state.in_flight() as u64, before + s.generated - s.detected - s.delivered);
            assert_eq!(reg.created(), reg.cleared() + reg.active_count());
        }
    }
}
