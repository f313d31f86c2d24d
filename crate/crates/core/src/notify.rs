//! Notification of insufficient security.
//!
//! A node whose resident packet checkers provide less than its required
//! security floods a notice carrying the missing amount. Each relay keeps
//! only the strongest notice it received this timestep, decrements it by one
//! and passes it on to every other link while it stays above the threshold.
//! Nothing is stored between timesteps.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::topology::{LinkId, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotificationPacket {
    pub origin: NodeId,
    /// Missing security level still advertised.
    pub value: f64,
    /// Link the packet arrived on; `None` at the origin.
    pub arrival: Option<LinkId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// A node's own deficiency is forwarded in preference to any relay.
    #[default]
    OwnFirst,
    /// Forward whichever of own emission and decayed relay is larger.
    MaxOfBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NotifyParams {
    pub threshold: f64,
    pub merge: MergeRule,
}

impl Default for NotifyParams {
    fn default() -> Self {
        NotifyParams {
            threshold: 0.0,
            merge: MergeRule::OwnFirst,
        }
    }
}

/// Packets delivered to one node during the current timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inbox {
    packets: Vec<NotificationPacket>,
}

fn rank(a: &NotificationPacket, b: &NotificationPacket) -> Ordering {
    // Higher value wins; ties go to the lower origin, then the lower link.
    a.value
        .total_cmp(&b.value)
        .then_with(|| b.origin.cmp(&a.origin))
        .then_with(|| b.arrival.cmp(&a.arrival))
}

impl Inbox {
    pub fn new() -> Inbox {
        Inbox::default()
    }

    pub fn push(&mut self, packet: NotificationPacket) {
        self.packets.push(packet);
    }

    pub fn clear(&mut self) {
        self.packets.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn packets(&self) -> &[NotificationPacket] {
        &self.packets
    }

    pub fn best(&self) -> Option<&NotificationPacket> {
        self.packets.iter().max_by(|a, b| rank(a, b))
    }
}

/// Starts a notification when `min_sec > sec_time`.
pub fn emit_deficiency(node: NodeId, sec_time: f64, min_sec: f64) -> Option<NotificationPacket> {
    (min_sec > sec_time).then_some(NotificationPacket {
        origin: node,
        value: min_sec - sec_time,
        arrival: None,
    })
}

/// Per-hop decrease applied on relay.
pub fn decay(value: f64) -> f64 {
    value - 1.0
}

/// Packets `node` sends this timestep, at most one per link.
///
/// The node's own emission goes out undecayed on every link. A relayed
/// notice is decayed and sent on every link except the one it arrived on,
/// provided the decayed value is still above `params.threshold`.
pub fn forward_step(
    topology: &Topology,
    node: NodeId,
    inbox: &Inbox,
    own_emission: Option<&NotificationPacket>,
    params: &NotifyParams,
) -> Vec<(LinkId, NotificationPacket)> {
    let relay = inbox.best().and_then(|best| {
        let value = decay(best.value);
        (value > params.threshold).then_some(NotificationPacket { value, ..*best })
    });
    let (candidate, skip) = match (own_emission, relay) {
        (Some(own), Some(relayed))
            if params.merge == MergeRule::MaxOfBoth && relayed.value > own.value =>
        {
            (relayed, relayed.arrival)
        }
        (Some(own), _) => (*own, None),
        (None, Some(relayed)) => (relayed, relayed.arrival),
        (None, None) => return Vec::new(),
    };
    topology
        .adj(node)
        .iter()
        .filter(|&&(link, _)| Some(link) != skip)
        .map(|&(link, _)| {
            (
                link,
                NotificationPacket {
                    arrival: Some(link),
                    ..candidate
                },
            )
        })
        .collect()
}

/// Outcome of a single isolated emission propagated to quiescence.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodTrace {
    /// Relay round in which each node first received the notice (round 1 is
    /// the origin's own send). `None` for nodes never reached; the origin
    /// itself is `Some(0)`.
    pub first_arrival: Vec<Option<u32>>,
    /// Value carried by the first arrival at each node.
    pub first_value: Vec<Option<f64>>,
    pub rounds: u32,
    pub packets: u64,
    /// Largest number of packets seen on one link in one direction in one
    /// round.
    pub max_per_direction: u32,
}

/// Propagates one emission of `value` from `origin` through otherwise
/// quiet nodes, round by round, using the same [`forward_step`] the engine
/// uses.
pub fn flood_trace(topology: &Topology, origin: NodeId, value: f64, params: &NotifyParams) -> FloodTrace {
    let n = topology.node_count();
    let mut first_arrival = vec![None; n];
    let mut first_value = vec![None; n];
    first_arrival[origin.index()] = Some(0);
    first_value[origin.index()] = Some(value);
    let mut inboxes = vec![Inbox::new(); n];
    let mut packets = 0;
    let mut max_per_direction = 0;
    let mut rounds = 0;
    let own = emit_deficiency(origin, 0.0, value);

    loop {
        let mut sends = Vec::new();
        for node in topology.nodes() {
            let emission = if rounds == 0 && node == origin { own.as_ref() } else { None };
            for (link, packet) in forward_step(topology, node, &inboxes[node.index()], emission, params) {
                sends.push((node, link, packet));
            }
        }
        if sends.is_empty() {
            break;
        }
        rounds += 1;
        for inbox in &mut inboxes {
            inbox.clear();
        }
        let mut per_direction = std::collections::HashMap::new();
        for (from, link, packet) in sends {
            let to = topology.link(link).other(from).expect("link belongs to sender");
            let slot = per_direction.entry((link, from)).or_insert(0u32);
            *slot += 1;
            max_per_direction = max_per_direction.max(*slot);
            packets += 1;
            if first_arrival[to.index()].is_none() {
                first_arrival[to.index()] = Some(rounds);
                first_value[to.index()] = Some(packet.value);
            }
            inboxes[to.index()].push(packet);
        }
    }
    FloodTrace {
        first_arrival,
        first_value,
        rounds,
        packets,
        max_per_direction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NodeRole;

    fn packet(origin: u32, value: f64, link: u32) -> NotificationPacket {
        NotificationPacket {
            origin: NodeId(origin),
            value,
            arrival: Some(LinkId(link)),
        }
    }

    /// Node 0 with neighbours 1, 2, 3 over links 0, 1, 2.
    fn star3() -> Topology {
        Topology::from_edges(
            vec![NodeRole::Router, NodeRole::Workstation, NodeRole::Workstation, NodeRole::Workstation],
            &[(NodeId(0), NodeId(1)), (NodeId(0), NodeId(2)), (NodeId(0), NodeId(3))],
        )
        .unwrap()
    }

    #[test]
    fn emission_threshold_is_strict() {
        assert_eq!(emit_deficiency(NodeId(4), 15.0, 20.0).unwrap().value, 5.0);
        assert_eq!(emit_deficiency(NodeId(4), 20.0, 20.0), None);
        assert_eq!(emit_deficiency(NodeId(4), 0.0, 20.0).unwrap().value, 20.0);
    }

    #[test]
    fn decay_subtracts_one() {
        assert_eq!(decay(5.0), 4.0);
        assert_eq!(decay(1.0), 0.0);
        assert_eq!(decay(0.5), -0.5);
    }

    #[test]
    fn best_uses_value_then_origin_then_link() {
        let mut inbox = Inbox::new();
        inbox.push(packet(5, 3.0, 0));
        inbox.push(packet(7, 5.0, 1));
        assert_eq!(inbox.best().unwrap().origin, NodeId(7));
        inbox.push(packet(6, 5.0, 2));
        assert_eq!(inbox.best().unwrap().origin, NodeId(6));
        inbox.push(packet(6, 5.0, 0));
        assert_eq!(inbox.best().unwrap().arrival, Some(LinkId(0)));
        inbox.clear();
        assert!(inbox.best().is_none());
    }

    #[test]
    fn relays_strongest_except_arrival_link() {
        let topo = star3();
        let mut inbox = Inbox::new();
        inbox.push(packet(9, 3.0, 0));
        inbox.push(packet(8, 5.0, 1));
        let out = forward_step(&topo, NodeId(0), &inbox, None, &NotifyParams::default());
        assert_eq!(out.len(), 2);
        for (link, p) in &out {
            assert_ne!(*link, LinkId(1));
            assert_eq!(p.value, 4.0);
            assert_eq!(p.origin, NodeId(8));
            assert_eq!(p.arrival, Some(*link));
        }
    }

    #[test]
    fn threshold_stops_relay() {
        let topo = star3();
        let mut inbox = Inbox::new();
        inbox.push(packet(1, 1.0, 0));
        assert!(forward_step(&topo, NodeId(0), &inbox, None, &NotifyParams::default()).is_empty());
    }

    #[test]
    fn own_emission_outranks_relay() {
        let topo = Topology::from_edges(
            vec![NodeRole::Router; 5],
            &(1..5).map(|i| (NodeId(0), NodeId(i))).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut inbox = Inbox::new();
        inbox.push(packet(3, 7.0, 2));
        let own = emit_deficiency(NodeId(0), 0.0, 20.0).unwrap();
        let out = forward_step(&topo, NodeId(0), &inbox, Some(&own), &NotifyParams::default());
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|(_, p)| p.value == 20.0 && p.origin == NodeId(0)));

        let weak = emit_deficiency(NodeId(0), 19.0, 20.0).unwrap();
        let max_rule = NotifyParams {
            merge: MergeRule::MaxOfBoth,
            ..Default::default()
        };
        let out = forward_step(&topo, NodeId(0), &inbox, Some(&weak), &max_rule);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|(_, p)| p.value == 6.0 && p.origin == NodeId(3)));
    }

    #[test]
    fn quiet_node_sends_nothing() {
        let topo = star3();
        assert!(forward_step(&topo, NodeId(0), &Inbox::new(), None, &NotifyParams::default()).is_empty());
    }

    #[test]
    fn path_flood_reaches_value_hops() {
        let edges: Vec<_> = (0..30).map(|i| (NodeId(i), NodeId(i + 1))).collect();
        let topo = Topology::from_edges(vec![NodeRole::Router; 31], &edges).unwrap();
        let trace = flood_trace(&topo, NodeId(0), 20.0, &NotifyParams::default());
        for d in 0..31u32 {
            let expect = (d <= 20).then_some(d);
            assert_eq!(trace.first_arrival[d as usize], expect, "node {d}");
        }
        assert_eq!(trace.first_value[19], Some(2.0));
        assert_eq!(trace.max_per_direction, 1);
    }
}
