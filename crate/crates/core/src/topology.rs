//! Network graph model and company-like topology generation.
//!
//! Generated networks are a random tree backbone of routers with
//! workstations and servers hanging off routers as leaves, plus one internet
//! gateway. A fragmented variant builds several such trees and joins
//! consecutive fragments with a fixed number of router-to-router bridges.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Workstation,
    Server,
    Router,
    Gateway,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Workstation => "workstation",
            NodeRole::Server => "server",
            NodeRole::Router => "router",
            NodeRole::Gateway => "gateway",
        }
    }

    /// End hosts are the machines intrusions try to install themselves on.
    pub fn is_host(self) -> bool {
        matches!(self, NodeRole::Workstation | NodeRole::Server)
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeRole {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "workstation" => Ok(NodeRole::Workstation),
            "server" => Ok(NodeRole::Server),
            "router" => Ok(NodeRole::Router),
            "gateway" => Ok(NodeRole::Gateway),
            other => Err(TopologyError::UnknownRole(other.to_string())),
        }
    }
}

/// Undirected link. Endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Connection {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
}

impl Connection {
    pub fn other(&self, end: NodeId) -> Option<NodeId> {
        if end == self.a {
            Some(self.b)
        } else if end == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.a == node || self.b == node
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node_count must be at least 2 (got {0})")]
    TooFewNodes(usize),
    #[error("fragment_count must be between 1 and node_count (got {fragments} for {nodes} nodes)")]
    BadFragmentCount { fragments: usize, nodes: usize },
    #[error("bridges_per_fragment_pair must be at least 1")]
    NoBridges,
    #[error("role mix fraction `{0}` must lie in [0, 1]")]
    FractionOutOfRange(&'static str),
    #[error("role mix fractions must sum to 1 (got {0})")]
    FractionSum(f64),
    #[error("{nodes} nodes cannot hold {gateways} gateway(s) plus one router per fragment ({fragments} fragments)")]
    RoleMixUnsatisfiable {
        nodes: usize,
        gateways: usize,
        fragments: usize,
    },
    #[error("fragments {0} and {1} have too few routers for the requested number of bridges")]
    TooManyBridges(usize, usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("unknown node role `{0}`")]
    UnknownRole(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Fractions of non-gateway nodes per role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoleMix {
    pub workstation: f64,
    pub server: f64,
    pub router: f64,
}

impl Default for RoleMix {
    fn default() -> Self {
        RoleMix {
            workstation: 0.71,
            server: 0.15,
            router: 0.14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub node_count: usize,
    pub fragment_count: usize,
    pub bridges_per_fragment_pair: usize,
    pub gateways: usize,
    pub role_mix: RoleMix,
    /// Explicit generator seed; when absent the simulation derives one from
    /// its master seed.
    pub seed: Option<u64>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            node_count: 200,
            fragment_count: 1,
            bridges_per_fragment_pair: 1,
            gateways: 1,
            role_mix: RoleMix::default(),
            seed: None,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let n = self.node_count;
        if n < 2 {
            return Err(TopologyError::TooFewNodes(n));
        }
        if self.fragment_count == 0 || self.fragment_count > n {
            return Err(TopologyError::BadFragmentCount {
                fragments: self.fragment_count,
                nodes: n,
            });
        }
        if self.bridges_per_fragment_pair == 0 {
            return Err(TopologyError::NoBridges);
        }
        let mix = &self.role_mix;
        for (name, v) in [
            ("workstation", mix.workstation),
            ("server", mix.server),
            ("router", mix.router),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TopologyError::FractionOutOfRange(name));
            }
        }
        let sum = mix.workstation + mix.server + mix.router;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TopologyError::FractionSum(sum));
        }
        if self.gateways + self.fragment_count > n {
            return Err(TopologyError::RoleMixUnsatisfiable {
                nodes: n,
                gateways: self.gateways,
                fragments: self.fragment_count,
            });
        }
        Ok(())
    }
}

/// Immutable network graph. Adjacency lists are sorted by neighbour id.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    roles: Vec<NodeRole>,
    links: Vec<Connection>,
    adjacency: Vec<Vec<(LinkId, NodeId)>>,
    fragments: Vec<u32>,
    bridges: Vec<LinkId>,
}

impl Topology {
    /// Builds a topology from roles and an undirected edge list.
    ///
    /// Link ids are assigned in ascending `(min, max)` endpoint order, so the
    /// result does not depend on the order of `edges`.
    pub fn from_edges(
        roles: Vec<NodeRole>,
        edges: &[(NodeId, NodeId)],
    ) -> Result<Topology, TopologyError> {
        let n = roles.len();
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            for x in [u, v] {
                if x.index() >= n {
                    return Err(TopologyError::UnknownNode(x));
                }
            }
            if u == v {
                return Err(TopologyError::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if !set.insert(key) {
                return Err(TopologyError::DuplicateEdge(key.0, key.1));
            }
        }
        let links: Vec<Connection> = set
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| Connection {
                id: LinkId(i as u32),
                a,
                b,
            })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for l in &links {
            adjacency[l.a.index()].push((l.id, l.b));
            adjacency[l.b.index()].push((l.id, l.a));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(_, nb)| nb);
        }
        Ok(Topology {
            roles,
            links,
            adjacency,
            fragments: vec![0; n],
            bridges: Vec::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.roles.len() as u32).map(NodeId)
    }

    pub fn role(&self, node: NodeId) -> NodeRole {
        self.roles[node.index()]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn links(&self) -> &[Connection] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Connection {
        &self.links[id.index()]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.roles.len()
    }

    /// Neighbours of `node` as `(link, neighbour)` pairs, ascending by
    /// neighbour id.
    pub fn neighbors(&self, node: NodeId) -> Result<&[(LinkId, NodeId)], TopologyError> {
        self.adjacency
            .get(node.index())
            .map(Vec::as_slice)
            .ok_or(TopologyError::UnknownNode(node))
    }

    /// Unchecked variant of [`Topology::neighbors`] for hot loops.
    pub fn adj(&self, node: NodeId) -> &[(LinkId, NodeId)] {
        &self.adjacency[node.index()]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node.index()].len()
    }

    /// Position of `link` in `node`'s adjacency list.
    pub fn slot_of(&self, node: NodeId, link: LinkId) -> Option<usize> {
        self.adj(node).iter().position(|&(l, _)| l == link)
    }

    pub fn gateways(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.role(n) == NodeRole::Gateway)
    }

    pub fn hosts(&self) -> Vec<NodeId> {
        self.nodes().filter(|&n| self.role(n).is_host()).collect()
    }

    /// Fragment index assigned at generation time (0 for imported graphs).
    pub fn fragment_of(&self, node: NodeId) -> u32 {
        self.fragments[node.index()]
    }

    pub fn fragment_nodes(&self, fragment: u32) -> Vec<NodeId> {
        self.nodes().filter(|&n| self.fragment_of(n) == fragment).collect()
    }

    /// Inter-fragment links created by the generator.
    pub fn bridge_links(&self) -> &[LinkId] {
        &self.bridges
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn distances_from(&self, src: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.node_count()];
        dist[src.index()] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap_or(0);
            for &(_, v) in self.adj(u) {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// BFS predecessor tree rooted at `src`. Neighbours are expanded in
    /// ascending id order, so among equal-length routes the one through the
    /// lowest-numbered discoverer wins.
    pub fn bfs_parents(&self, src: NodeId) -> Vec<Option<NodeId>> {
        let mut parent = vec![None; self.node_count()];
        let mut seen = vec![false; self.node_count()];
        seen[src.index()] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(_, v) in self.adj(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    parent[v.index()] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        path_from_parents(&self.bfs_parents(src), src, dst)
    }

    /// Serializes to the line format `nodes <N>` / `node <id> <role>` /
    /// `edge <u> <v>`, ids ascending.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.node_count());
        for n in self.nodes() {
            out.push_str(&format!("node {} {}\n", n, self.role(n)));
        }
        for l in &self.links {
            out.push_str(&format!("edge {} {}\n", l.a, l.b));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Topology, TopologyError> {
        let perr = |line: usize, message: String| TopologyError::Parse { line, message };
        let mut count: Option<usize> = None;
        let mut roles: Vec<Option<NodeRole>> = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            let parse_id = |s: &str| -> Result<u32, TopologyError> {
                s.parse::<u32>()
                    .map_err(|_| perr(line, format!("invalid node id `{s}`")))
            };
            match fields.as_slice() {
                [] => continue,
                ["nodes", n] => {
                    if count.is_some() {
                        return Err(perr(line, "duplicate `nodes` header".into()));
                    }
                    let n = n
                        .parse::<usize>()
                        .map_err(|_| perr(line, format!("invalid node count `{n}`")))?;
                    count = Some(n);
                    roles = vec![None; n];
                }
                ["node", id, role] => {
                    let n = count.ok_or_else(|| perr(line, "`node` before `nodes` header".into()))?;
                    let id = parse_id(id)? as usize;
                    if id >= n {
                        return Err(perr(line, format!("node id {id} out of range")));
                    }
                    if roles[id].is_some() {
                        return Err(perr(line, format!("node {id} declared twice")));
                    }
                    roles[id] = Some(role.parse().map_err(|e: TopologyError| perr(line, e.to_string()))?);
                }
                ["edge", u, v] => {
                    edges.push((NodeId(parse_id(u)?), NodeId(parse_id(v)?)));
                }
                _ => return Err(perr(line, format!("unrecognized line `{raw}`"))),
            }
        }
        let count = count.ok_or_else(|| perr(0, "missing `nodes` header".into()))?;
        let roles = roles
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| perr(0, format!("node {i} has no role"))))
            .collect::<Result<Vec<_>, _>>()?;
        debug_assert_eq!(roles.len(), count);
        Topology::from_edges(roles, &edges)
    }
}

pub fn path_from_parents(
    parents: &[Option<NodeId>],
    src: NodeId,
    dst: NodeId,
) -> Option<Vec<NodeId>> {
    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = parents[cur.index()]?;
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Generates a company-like network. Pure function of `config` and `seed`.
pub fn generate_topology(config: &TopologyConfig, seed: u64) -> Result<Topology, TopologyError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.node_count;
    let frags = config.fragment_count;
    let non_gw = n - config.gateways;

    let routers = ((config.role_mix.router * non_gw as f64).round() as usize)
        .max(frags)
        .min(non_gw);
    let servers = ((config.role_mix.server * non_gw as f64).round() as usize).min(non_gw - routers);
    let workstations = non_gw - routers - servers;

    let mut roles = Vec::with_capacity(n);
    roles.extend(std::iter::repeat_n(NodeRole::Gateway, config.gateways));
    roles.extend(std::iter::repeat_n(NodeRole::Router, routers));
    roles.extend(std::iter::repeat_n(NodeRole::Server, servers));
    roles.extend(std::iter::repeat_n(NodeRole::Workstation, workstations));

    let mut fragments = vec![0u32; n];
    let mut frag_routers: Vec<Vec<NodeId>> = vec![Vec::new(); frags];
    let router_ids = config.gateways..config.gateways + routers;
    for (i, r) in router_ids.clone().enumerate() {
        let f = i % frags;
        fragments[r] = f as u32;
        frag_routers[f].push(NodeId(r as u32));
    }

    let mut edges = Vec::with_capacity(n);
    for rs in &frag_routers {
        for k in 1..rs.len() {
            let parent = rs[rng.random_range(0..k)];
            edges.push((parent, rs[k]));
        }
    }
    for (i, leaf) in (router_ids.end..n).enumerate() {
        let f = i % frags;
        fragments[leaf] = f as u32;
        let rs = &frag_routers[f];
        edges.push((rs[rng.random_range(0..rs.len())], NodeId(leaf as u32)));
    }
    for g in 0..config.gateways {
        let rs = &frag_routers[0];
        edges.push((rs[rng.random_range(0..rs.len())], NodeId(g as u32)));
    }

    let mut bridge_pairs = Vec::new();
    for f in 0..frags.saturating_sub(1) {
        let (left, right) = (&frag_routers[f], &frag_routers[f + 1]);
        if config.bridges_per_fragment_pair > left.len() * right.len() {
            return Err(TopologyError::TooManyBridges(f, f + 1));
        }
        let mut chosen = BTreeSet::new();
        while chosen.len() < config.bridges_per_fragment_pair {
            let a = left[rng.random_range(0..left.len())];
            let b = right[rng.random_range(0..right.len())];
            chosen.insert((a.min(b), a.max(b)));
        }
        bridge_pairs.extend(chosen);
    }
    edges.extend(bridge_pairs.iter().copied());

    let mut topo = Topology::from_edges(roles, &edges)?;
    topo.fragments = fragments;
    topo.bridges = topo
        .links
        .iter()
        .filter(|l| bridge_pairs.contains(&(l.a, l.b)))
        .map(|l| l.id)
        .collect();
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::from_edges(
            vec![NodeRole::Workstation, NodeRole::Router, NodeRole::Server],
            &[(NodeId(1), NodeId(2)), (NodeId(0), NodeId(1))],
        )
        .unwrap()
    }

    #[test]
    fn path_graph_neighbors() {
        let t = path3();
        let nb = t.neighbors(NodeId(1)).unwrap();
        assert_eq!(nb, &[(LinkId(0), NodeId(0)), (LinkId(1), NodeId(2))]);
        assert_eq!(t.neighbors(NodeId(0)).unwrap().len(), 1);
        assert_eq!(t.neighbors(NodeId(3)), Err(TopologyError::UnknownNode(NodeId(3))));
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let roles = vec![NodeRole::Router; 2];
        assert_eq!(
            Topology::from_edges(roles.clone(), &[(NodeId(1), NodeId(1))]),
            Err(TopologyError::SelfLoop(NodeId(1)))
        );
        assert_eq!(
            Topology::from_edges(roles, &[(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))]),
            Err(TopologyError::DuplicateEdge(NodeId(0), NodeId(1)))
        );
    }

    #[test]
    fn two_node_minimum() {
        let cfg = TopologyConfig {
            node_count: 2,
            ..Default::default()
        };
        let t = generate_topology(&cfg, 1).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.link_count(), 1);
        assert_eq!(t.gateways().count(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = TopologyConfig::default();
        let too_small = TopologyConfig {
            node_count: 1,
            ..base.clone()
        };
        assert!(matches!(too_small.validate(), Err(TopologyError::TooFewNodes(1))));
        let frags = TopologyConfig {
            node_count: 5,
            fragment_count: 6,
            ..base.clone()
        };
        assert!(matches!(frags.validate(), Err(TopologyError::BadFragmentCount { .. })));
        let unsat = TopologyConfig {
            node_count: 4,
            fragment_count: 4,
            ..base.clone()
        };
        assert!(matches!(unsat.validate(), Err(TopologyError::RoleMixUnsatisfiable { .. })));
        let sum = TopologyConfig {
            role_mix: RoleMix {
                workstation: 0.5,
                server: 0.1,
                router: 0.1,
            },
            ..base
        };
        assert!(matches!(sum.validate(), Err(TopologyError::FractionSum(_))));
    }

    #[test]
    fn text_round_trip() {
        let t = generate_topology(&TopologyConfig::default(), 42).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("nodes 200\nnode 0 gateway\n"));
        let back = Topology::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.links(), t.links());
    }

    #[test]
    fn from_text_errors_carry_line_numbers() {
        let err = Topology::from_text("nodes 2\nnode 0 router\nnode 1 toaster\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }));
        let err = Topology::from_text("nodes 2\nnode 0 router\nbogus\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }));
    }

    #[test]
    fn shortest_path_prefers_low_ids_on_ties() {
        // square 0-1-3, 0-2-3
        let t = Topology::from_edges(
            vec![NodeRole::Router; 4],
            &[
                (NodeId(0), NodeId(1)),
                (NodeId(0), NodeId(2)),
                (NodeId(1), NodeId(3)),
                (NodeId(2), NodeId(3)),
            ],
        )
        .unwrap();
        assert_eq!(
            t.shortest_path(NodeId(0), NodeId(3)).unwrap(),
            vec![NodeId(0), NodeId(1), NodeId(3)]
        );
    }
}
