use std::collections::VecDeque;

use immunet_core::notify::{flood_trace, NotifyParams};
use immunet_core::{NodeId, NodeRole, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected graph: a random spanning tree plus a few chords.
fn random_graph(rng: &mut ChaCha8Rng) -> Topology {
    let n = rng.random_range(2..=50u32);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((NodeId(rng.random_range(0..v)), NodeId(v)));
    }
    let chords = rng.random_range(0..=n / 2);
    for _ in 0..chords {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !edges.iter().any(|&(x, y)| (x.0, y.0) == (a.min(b), a.max(b)) || (x.0, y.0) == (a.max(b), a.min(b))) {
            edges.push((NodeId(a.min(b)), NodeId(a.max(b))));
        }
    }
    Topology::from_edges(vec![NodeRole::Router; n as usize], &edges).unwrap()
}

fn bfs(n: usize, edges: &[(usize, usize)], origin: usize) -> Vec<Option<u32>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![None; n];
    dist[origin] = Some(0);
    let mut queue = VecDeque::from([origin]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(dist[v].unwrap() + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

#[test]
fn emission_reaches_exactly_the_bfs_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let params = NotifyParams::default();
    for _ in 0..100 {
        let t = random_graph(&mut rng);
        let n = t.node_count();
        let origin = rng.random_range(0..n);
        let value = rng.random_range(1..=8u32);
        let edges: Vec<(usize, usize)> = t.links().iter().map(|c| (c.a.index(), c.b.index())).collect();
        let dist = bfs(n, &edges, origin);
        let trace = flood_trace(&t, NodeId(origin as u32), value as f64, &params);
        for v in 0..n {
            let expected = dist[v].filter(|&d| d <= value);
            assert_eq!(trace.first_arrival[v], expected, "node {v}, origin {origin}, value {value}, n {n}");
        }
        assert!(trace.max_per_direction <= 1);
    }
}

#[test]
fn value_twenty_on_a_long_path() {
    let n = 30;
    let edges: Vec<(NodeId, NodeId)> = (0..n - 1).map(|i| (NodeId(i), NodeId(i + 1))).collect();
    let t = Topology::from_edges(vec![NodeRole::Router; n as usize], &edges).unwrap();
    let trace = flood_trace(&t, NodeId(0), 20.0, &NotifyParams::default());
    for d in 0..n as usize {
        let expected = (d <= 20).then_some(d as u32);
        assert_eq!(trace.first_arrival[d], expected);
        if (1..=20).contains(&d) {
            assert_eq!(trace.first_value[d], Some(21.0 - d as f64));
        }
    }
    assert_eq!(trace.packets, 20);
}

#[test]
fn lower_value_never_travels_further() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let t = random_graph(&mut rng);
        let small = flood_trace(&t, NodeId(0), 2.0, &NotifyParams::default());
        let large = flood_trace(&t, NodeId(0), 5.0, &NotifyParams::default());
        for v in 0..t.node_count() {
            if small.first_arrival[v].is_some() {
                assert_eq!(small.first_arrival[v], large.first_arrival[v]);
            }
        }
    }
}
