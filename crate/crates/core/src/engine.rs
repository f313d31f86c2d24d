//! The discrete-time simulation loop.
//!
//! Each step runs, in order: traffic, node checks, deficiency emission,
//! notification relay, trail decay, movement, metrics.

use std::collections::BTreeMap;

use crate::config::{BridgeFallback, ConfigError, PinningRule, Placement, SimulationConfig, Strategy};
use crate::entity::{decide_move, Cell, CellKind, CellTypeId, Move, TrailView};
use crate::metrics::{LinkCount, MetricsReport, StepRow};
use crate::notify::{emit_deficiency, forward_step, Inbox, NotificationPacket};
use crate::rng::{derive_seed, stream, stream_at, SimRng, Stream};
use crate::threat::{check_node, generate_direct_infections, InfectionRegistry, PresenceIndex, TrafficRecord, TrafficState};
use crate::topology::{generate_topology, LinkId, NodeId, Topology};
use crate::trails::{TrailParams, TrailTable};

/// One teleport issued by the centralized manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub cell: u32,
    pub from: NodeId,
    pub to: NodeId,
    pub hops: u32,
}

/// Greedy rebalancing of packet checkers by an omniscient manager.
///
/// Repeatedly takes the node with the largest deficit (lowest id on ties)
/// and fills it from the reachable node with the largest surplus, moving the
/// highest-id packet checker whose security fits inside that surplus. Stops
/// when no deficit node can be served. `cells` is updated in place.
pub fn centralized_assign(topology: &Topology, cells: &mut [Cell], min_sec: &[f64], distances: &[Vec<Option<u32>>]) -> Vec<Assignment> {
    let n = topology.node_count();
    let mut sec = vec![0.0; n];
    let mut residents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, c) in cells.iter().enumerate() {
        if c.kind == CellKind::PacketChecker {
            sec[c.location.index()] += c.sec_value;
            residents[c.location.index()].push(i);
        }
    }
    let mut out = Vec::new();
    loop {
        let mut deficits: Vec<usize> = (0..n).filter(|&v| min_sec[v] > sec[v]).collect();
        if deficits.is_empty() {
            break;
        }
        deficits.sort_by(|&a, &b| (min_sec[b] - sec[b]).total_cmp(&(min_sec[a] - sec[a])).then(a.cmp(&b)));
        let mut moved = None;
        'deficit: for &d in &deficits {
            let mut sources: Vec<usize> = (0..n)
                .filter(|&s| s != d && distances[d][s].is_some() && sec[s] > min_sec[s])
                .collect();
            sources.sort_by(|&a, &b| (sec[b] - min_sec[b]).total_cmp(&(sec[a] - min_sec[a])).then(a.cmp(&b)));
            for s in sources {
                let surplus = sec[s] - min_sec[s];
                let pick = residents[s]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &ci)| cells[ci].sec_value > 0.0 && cells[ci].sec_value <= surplus)
                    .max_by_key(|&(_, &ci)| cells[ci].id);
                if let Some((slot, &ci)) = pick {
                    moved = Some((d, s, slot, ci));
                    break 'deficit;
                }
            }
        }
        let Some((d, s, slot, ci)) = moved else { break };
        residents[s].swap_remove(slot);
        residents[d].push(ci);
        let v = cells[ci].sec_value;
        sec[s] -= v;
        sec[d] += v;
        cells[ci].location = NodeId(d as u32);
        cells[ci].directed_target = None;
        out.push(Assignment {
            cell: cells[ci].id,
            from: NodeId(s as u32),
            to: NodeId(d as u32),
            hops: distances[d][s].unwrap_or(0),
        });
    }
    out
}

/// Full simulation state.
pub struct Simulation {
    config: SimulationConfig,
    topology: Topology,
    cells: Vec<Cell>,
    min_sec: Vec<f64>,
    presence: PresenceIndex,
    registry: InfectionRegistry,
    traffic: TrafficState,
    trail_params: TrailParams,
    trails: Option<TrailTable>,
    inboxes: Vec<Inbox>,
    distances: Vec<Vec<Option<u32>>>,
    movement_rng: SimRng,
    selection_rng: SimRng,
    traffic_log: Option<Vec<TrafficRecord>>,
    t: u64,
    window: u64,
    redundant_gap: u64,
    report: MetricsReport,
}

impl Simulation {
    /// Validates `config`, generates its topology and places the cells.
    pub fn new(config: SimulationConfig) -> Result<Simulation, ConfigError> {
        config.validate()?;
        let seed = config
            .topology
            .seed
            .unwrap_or_else(|| derive_seed(config.run.seed, Stream::Topology));
        let topology = generate_topology(&config.topology, seed)?;
        Simulation::with_topology(config, topology)
    }

    /// Like [`Simulation::new`] but on a given network; the `topology`
    /// section of `config` is ignored.
    pub fn with_topology(config: SimulationConfig, topology: Topology) -> Result<Simulation, ConfigError> {
        let mut probe = config.clone();
        probe.topology = Default::default();
        probe.validate()?;
        let n = topology.node_count();
        let k = config.cells.intrusion_types;
        let in_range = |node: NodeId| node.index() < n;

        let mut min_sec = vec![config.security.min_sec; n];
        for o in &config.security.overrides {
            if !in_range(o.node) {
                return Err(ConfigError::new("security.min_sec_override.node", format!("unknown node {}", o.node)));
            }
            min_sec[o.node.index()] = o.min_sec;
        }

        let cells = place_cells(&config, &topology)?;

        let trail_params = config.trails.params();
        let trails = if config.run.strategy.trails() {
            let mut table = TrailTable::new(&topology, k as usize);
            let fallback: Vec<NodeId> = match &config.trails.bridge_fallback {
                BridgeFallback::Off => Vec::new(),
                BridgeFallback::FragmentBridges => topology
                    .bridge_links()
                    .iter()
                    .flat_map(|&l| [topology.link(l).a, topology.link(l).b])
                    .collect(),
                BridgeFallback::Nodes(nodes) => nodes.clone(),
            };
            for node in fallback {
                if !in_range(node) {
                    return Err(ConfigError::new("trails.bridge_fallback", format!("unknown node {node}")));
                }
                table.set_bridge_fallback(node, true);
            }
            for o in &config.trails.decay_overrides {
                if !in_range(o.node) {
                    return Err(ConfigError::new("trails.decay_override.node", format!("unknown node {}", o.node)));
                }
                table.set_decay_override(o.node, Some(o.c3));
            }
            Some(table)
        } else {
            None
        };

        let distances = if config.run.strategy == Strategy::Centralized {
            topology.nodes().map(|v| topology.distances_from(v)).collect()
        } else {
            Vec::new()
        };

        let checker_types: Vec<CellTypeId> = (1..=k)
            .map(CellTypeId)
            .filter(|&ty| config.cells.count(ty, CellKind::NodeChecker) > 0)
            .collect();
        let min_checkers = checker_types
            .iter()
            .map(|&ty| config.cells.count(ty, CellKind::NodeChecker) as u64)
            .min()
            .unwrap_or(1);
        let window = config
            .run
            .coverage_window
            .unwrap_or_else(|| (4 * n as u64).div_ceil(min_checkers).max(1));

        let mut presence = PresenceIndex::new(n, k as usize);
        presence.rebuild(&cells);
        let seed = config.run.seed;
        let report = MetricsReport {
            strategy: config.run.strategy,
            seed,
            duration: config.run.duration,
            node_count: n,
            intrusion_types: k,
            checker_types,
            coverage_window: window,
            packets_generated: 0,
            introduced: 0,
            detected: 0,
            infections_created: 0,
            infections_cleared: 0,
            infections_active: 0,
            coverage: vec![Vec::new(); n * k as usize],
            notification_packets: Vec::new(),
            notification_total: 0,
            max_notifications_per_direction: 0,
            control_bandwidth: 0,
            centralized_moves: 0,
            deficiency_series: Vec::with_capacity(config.run.duration as usize),
            entity_histogram: Vec::with_capacity(config.run.duration as usize * n),
            rows: Vec::with_capacity(config.run.duration as usize),
        };
        Ok(Simulation {
            trail_params,
            trails,
            inboxes: vec![Inbox::new(); n],
            distances,
            movement_rng: stream(seed, Stream::Movement),
            selection_rng: stream(seed, Stream::Selection),
            traffic_log: None,
            t: 0,
            window,
            redundant_gap: (window / 4).max(1),
            presence,
            registry: InfectionRegistry::default(),
            traffic: TrafficState::default(),
            min_sec,
            cells,
            topology,
            config,
            report,
        })
    }

    /// Keeps a per-packet record of every resolved traffic packet.
    pub fn enable_traffic_log(&mut self) {
        self.traffic_log.get_or_insert_with(Vec::new);
    }

    pub fn traffic_log(&self) -> Option<&[TrafficRecord]> {
        self.traffic_log.as_deref()
    }

    /// Takes the records logged so far, leaving logging enabled.
    pub fn drain_traffic_log(&mut self) -> Vec<TrafficRecord> {
        self.traffic_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn trail_table(&self) -> Option<&TrailTable> {
        self.trails.as_ref()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn min_sec(&self) -> &[f64] {
        &self.min_sec
    }

    pub fn inbox(&self, node: NodeId) -> &Inbox {
        &self.inboxes[node.index()]
    }

    /// Next timestep to execute.
    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.run.duration
    }

    pub fn report(&self) -> &MetricsReport {
        &self.report
    }

    /// Security each node currently gets from its packet checkers.
    pub fn security(&self) -> Vec<f64> {
        let mut sec = vec![0.0; self.topology.node_count()];
        for c in self.cells.iter().filter(|c| c.kind == CellKind::PacketChecker) {
            sec[c.location.index()] += c.sec_value;
        }
        sec
    }

    /// Executes one timestep.
    pub fn step(&mut self) {
        let t = self.t;
        let n = self.topology.node_count();
        let k = self.config.cells.intrusion_types;
        let strategy = self.config.run.strategy;
        let mut row = StepRow { t, ..Default::default() };

        // traffic
        let mut rng = stream_at(self.config.run.seed, Stream::Traffic, t);
        let traffic = self.traffic.step(
            &self.config.traffic,
            &self.topology,
            k,
            &self.presence,
            &mut self.registry,
            t,
            &mut rng,
            self.traffic_log.as_mut(),
        );
        for (node, ty) in generate_direct_infections(&self.config.traffic, &self.topology, k, &mut rng) {
            self.registry.install(node, ty, t);
        }
        self.report.packets_generated += traffic.generated;
        self.report.introduced += traffic.intrusions;
        self.report.detected += traffic.detected;

        // node checks
        for cell in self.cells.iter().filter(|c| c.kind == CellKind::NodeChecker) {
            let check = check_node(cell, &mut self.registry, t);
            let ts = &mut self.report.coverage[check.event.node.index() * k as usize + check.event.cell_type.index()];
            if ts.last().is_some_and(|&prev| t - prev < self.redundant_gap) {
                row.redundant_checks += 1;
            }
            if ts.last() != Some(&t) {
                ts.push(t);
            }
            row.checks += 1;
        }

        // deficiency
        let sec = self.security();
        let emissions: Vec<Option<NotificationPacket>> = (0..n)
            .map(|v| emit_deficiency(NodeId(v as u32), sec[v], self.min_sec[v]))
            .collect();
        row.deficient_nodes = emissions.iter().filter(|e| e.is_some()).count() as u32;

        // relay
        if strategy.notification() {
            self.relay(&emissions, &mut row);
        }

        if let Some(table) = &mut self.trails {
            table.decay_all(&self.trail_params);
        }

        self.movement(&sec);

        // metrics
        self.presence.rebuild(&self.cells);
        let mut hist = vec![0u32; n];
        for c in &self.cells {
            hist[c.location.index()] += 1;
        }
        row.max_cells_per_node = hist.iter().copied().max().unwrap_or(0);
        row.min_cells_per_node = hist.iter().copied().min().unwrap_or(0);
        self.report.entity_histogram.extend_from_slice(&hist);
        self.report.deficiency_series.push(row.deficient_nodes);
        row.detections_cum = self.report.detected;
        row.introduced_cum = self.report.introduced;
        self.report.infections_created = self.registry.created();
        self.report.infections_cleared = self.registry.cleared();
        self.report.infections_active = self.registry.active_count();
        self.report.rows.push(row);
        self.t += 1;
    }

    fn relay(&mut self, emissions: &[Option<NotificationPacket>], row: &mut StepRow) {
        let params = self.config.notification;
        let mut sends = Vec::new();
        for node in self.topology.nodes() {
            let own = emissions[node.index()].as_ref();
            for (link, packet) in forward_step(&self.topology, node, &self.inboxes[node.index()], own, &params) {
                sends.push((node, link, packet));
            }
        }
        for inbox in &mut self.inboxes {
            inbox.clear();
        }
        let mut per_link: BTreeMap<LinkId, u32> = BTreeMap::new();
        let mut per_direction: BTreeMap<(LinkId, NodeId), u32> = BTreeMap::new();
        for (from, link, packet) in sends {
            let to = self.topology.link(link).other(from).expect("sender owns link");
            *per_link.entry(link).or_default() += 1;
            let d = per_direction.entry((link, from)).or_default();
            *d += 1;
            self.report.max_notifications_per_direction = self.report.max_notifications_per_direction.max(*d);
            self.inboxes[to.index()].push(packet);
        }
        let total: u64 = per_link.values().map(|&c| c as u64).sum();
        self.report
            .notification_packets
            .extend(per_link.into_iter().map(|(link, count)| LinkCount { t: row.t, link, count }));
        self.report.notification_total += total;
        self.report.control_bandwidth += total;
        row.notification_packets = total;
    }

    fn movement(&mut self, sec: &[f64]) {
        let strategy = self.config.run.strategy;
        let params = self.config.movement;
        let notification = strategy.notification();
        let pinning = self.config.security.pinning;
        let mut live = sec.to_vec();

        for i in 0..self.cells.len() {
            let cell = &self.cells[i];
            let here = cell.location;
            let decision = match cell.kind {
                CellKind::PacketChecker => {
                    let (lacking, best) = if notification {
                        let lacking = match pinning {
                            PinningRule::Departure => self.min_sec[here.index()] - (live[here.index()] - cell.sec_value),
                            PinningRule::Deficient => self.min_sec[here.index()] - sec[here.index()],
                        };
                        (lacking.max(0.0), self.inboxes[here.index()].best())
                    } else {
                        (0.0, None)
                    };
                    decide_move(cell, &self.topology, &params, lacking, best, None, &mut self.movement_rng)
                }
                CellKind::NodeChecker => {
                    let view = self.trails.as_ref().map(|table| TrailView { table });
                    decide_move(cell, &self.topology, &params, 0.0, None, view, &mut self.selection_rng)
                }
            };
            let Move::Move(link) = decision else { continue };
            let to = self.topology.link(link).other(here).expect("move along own link");
            let cell = &mut self.cells[i];
            if cell.kind == CellKind::PacketChecker {
                live[here.index()] -= cell.sec_value;
            } else if let Some(table) = &mut self.trails {
                table
                    .record_traversal(&self.topology, here, link, cell.cell_type, &self.trail_params)
                    .expect("link leaves the node");
                if self.config.trails.mark_arrival {
                    table
                        .record_traversal(&self.topology, to, link, cell.cell_type, &self.trail_params)
                        .expect("link enters the node");
                }
            }
            cell.location = to;
        }

        if strategy == Strategy::Centralized {
            let moves = centralized_assign(&self.topology, &mut self.cells, &self.min_sec, &self.distances);
            self.report.centralized_moves += moves.len() as u64;
            self.report.control_bandwidth += moves.iter().map(|m| 2 * m.hops as u64).sum::<u64>();
        }
    }

    /// Runs the remaining steps and returns the report.
    pub fn run_to_end(mut self) -> MetricsReport {
        while !self.is_finished() {
            self.step();
        }
        self.report
    }

    pub fn into_report(self) -> MetricsReport {
        self.report
    }

    /// Coverage window used for checked-fraction metrics.
    pub fn coverage_window(&self) -> u64 {
        self.window
    }
}

fn place_cells(config: &SimulationConfig, topology: &Topology) -> Result<Vec<Cell>, ConfigError> {
    let n = topology.node_count();
    let cc = &config.cells;
    let mut cells = Vec::with_capacity((cc.total(CellKind::PacketChecker) + cc.total(CellKind::NodeChecker)) as usize);
    let mut offset = 0usize;
    for (kind, placement, key) in [
        (CellKind::PacketChecker, cc.packet_checker_placement, "cells.packet_checker_placement"),
        (CellKind::NodeChecker, cc.node_checker_placement, "cells.node_checker_placement"),
    ] {
        let pool: Vec<NodeId> = match placement {
            Placement::RoundRobin => topology.nodes().collect(),
            Placement::Node(node) if node.index() < n => vec![node],
            Placement::Node(node) => return Err(ConfigError::new(key, format!("unknown node {node}"))),
            Placement::Fragment(f) => {
                let nodes = topology.fragment_nodes(f);
                if nodes.is_empty() {
                    return Err(ConfigError::new(key, format!("fragment {f} has no nodes")));
                }
                nodes
            }
        };
        let mut i = 0usize;
        for ty in (1..=cc.intrusion_types).map(CellTypeId) {
            for _ in 0..cc.count(ty, kind) {
                let slot = match placement {
                    Placement::RoundRobin => (offset + i) % pool.len(),
                    _ => i % pool.len(),
                };
                let mut cell = Cell::new(cells.len() as u32, ty, kind, pool[slot]);
                cell.sec_value = cc.sec_value;
                cells.push(cell);
                i += 1;
            }
        }
        if placement == Placement::RoundRobin {
            offset += i;
        }
    }
    Ok(cells)
}

/// Builds a simulation from `config` and runs it to completion.
pub fn run(config: &SimulationConfig) -> Result<MetricsReport, ConfigError> {
    Ok(Simulation::new(config.clone())?.run_to_end())
}
