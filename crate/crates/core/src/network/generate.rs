//! Deterministic benchmark-network generator.
//!
//! Produces a connected desk-scale network: nodes on a jittered grid, a
//! Euclidean minimum spanning tree for the mains, extra short pipes for loops
//! (average node degree lands in [2, 3]), gently sloped elevations, and one
//! fixed-head source per ~48 nodes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{NodeRecord, PipeRecord, PipeStatus, SourceRecord, WaterNetwork};
use crate::seed;

const GRID_SPACING: f64 = 60.0;
const DEGREE_CAP: usize = 5;

pub fn generate_benchmark_network(n_nodes: usize, seed_value: u64) -> Result<WaterNetwork> {
    if n_nodes < 3 {
        return Err(Error::InvalidConfig(format!(
            "benchmark network needs at least 3 nodes, got {n_nodes}"
        )));
    }
    let mut rng = seed::rng(seed_value);

    // Jittered grid coordinates.
    let side = (n_nodes as f64).sqrt().ceil() as usize;
    let mut coords = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let row = (i / side) as f64;
        let col = (i % side) as f64;
        coords.push([
            col * GRID_SPACING + rng.random_range(-12.0..12.0),
            row * GRID_SPACING + rng.random_range(-12.0..12.0),
        ]);
    }

    // Gentle elevation slope plus jitter.
    let elevations: Vec<f64> = coords
        .iter()
        .map(|c| 10.0 + 0.015 * c[0] + 0.008 * c[1] + rng.random_range(-0.5..0.5))
        .collect();

    let dist = |a: usize, b: usize| -> f64 {
        let (ca, cb) = (coords[a], coords[b]);
        ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt()
    };

    // Prim's MST over Euclidean distances keeps the mains short and is
    // deterministic given the coordinates.
    let mut in_tree = vec![false; n_nodes];
    let mut best = vec![(f64::INFINITY, 0usize); n_nodes];
    in_tree[0] = true;
    for v in 1..n_nodes {
        best[v] = (dist(0, v), 0);
    }
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n_nodes - 1);
    for _ in 1..n_nodes {
        let mut pick = usize::MAX;
        for v in 0..n_nodes {
            if !in_tree[v] && (pick == usize::MAX || best[v].0 < best[pick].0) {
                pick = v;
            }
        }
        let parent = best[pick].1;
        edges.push((parent.min(pick), parent.max(pick)));
        in_tree[pick] = true;
        for v in 0..n_nodes {
            if !in_tree[v] {
                let d = dist(pick, v);
                if d < best[v].0 {
                    best[v] = (d, pick);
                }
            }
        }
    }
    let tree_count = edges.len();

    // Add the shortest non-tree pairs until the target pipe count, capping
    // node degree. Target 1.25·n keeps the average degree inside [2, 3].
    let max_pipes = n_nodes * (n_nodes - 1) / 2;
    let target = (((n_nodes as f64) * 1.25).round() as usize)
        .clamp(n_nodes, (n_nodes * 3 / 2).max(n_nodes))
        .min(max_pipes);
    let mut present: std::collections::BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut degree = vec![0usize; n_nodes];
    for &(u, v) in &edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for u in 0..n_nodes {
        for v in (u + 1)..n_nodes {
            if !present.contains(&(u, v)) {
                candidates.push((u, v));
            }
        }
    }
    candidates.sort_by(|&a, &b| {
        dist(a.0, a.1)
            .partial_cmp(&dist(b.0, b.1))
            .unwrap()
            .then(a.cmp(&b))
    });
    for (u, v) in candidates {
        if edges.len() >= target {
            break;
        }
        if degree[u] < DEGREE_CAP && degree[v] < DEGREE_CAP {
            edges.push((u, v));
            present.insert((u, v));
            degree[u] += 1;
            degree[v] += 1;
        }
    }

    // Sources: the node nearest the SW corner, plus the node nearest the NE
    // corner when the network is large enough for two.
    let n_sources = (n_nodes / 48).max(1).min(2);
    let corner_rank = |v: usize, sign: f64| sign * (coords[v][0] + coords[v][1]);
    let mut source_nodes = vec![(0..n_nodes)
        .min_by(|&a, &b| corner_rank(a, 1.0).partial_cmp(&corner_rank(b, 1.0)).unwrap())
        .unwrap()];
    if n_sources > 1 {
        let far = (0..n_nodes)
            .filter(|v| !source_nodes.contains(v))
            .min_by(|&a, &b| corner_rank(a, -1.0).partial_cmp(&corner_rank(b, -1.0)).unwrap())
            .unwrap();
        source_nodes.push(far);
    }
    source_nodes.sort_unstable();
    let max_elev = elevations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sources: Vec<SourceRecord> = source_nodes
        .iter()
        .map(|&v| SourceRecord {
            node: v,
            head: max_elev + 40.0 + rng.random_range(0.0..5.0),
        })
        .collect();

    let nodes: Vec<NodeRecord> = (0..n_nodes)
        .map(|i| NodeRecord {
            id: i,
            coord: coords[i],
            elevation: elevations[i],
            base_demand: if source_nodes.contains(&i) {
                0.0
            } else {
                rng.random_range(0.05..0.5)
            },
            demand_pattern_id: rng.random_range(0..3usize),
        })
        .collect();

    let diameters = [0.15, 0.2, 0.25];
    let pipes: Vec<PipeRecord> = edges
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| PipeRecord {
            id: i,
            endpoints: (u, v),
            length: dist(u, v).max(1.0) * rng.random_range(1.0..1.15),
            // mains (tree pipes) get the larger bores
            diameter: if i < tree_count {
                diameters[rng.random_range(1..3usize)]
            } else {
                diameters[rng.random_range(0..2usize)]
            },
            roughness: rng.random_range(100.0..140.0),
            status: PipeStatus::Open,
        })
        .collect();

    WaterNetwork::new(nodes, pipes, sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::serialize_network;

    #[test]
    fn minimal_three_node_network_is_connected() {
        let net = generate_benchmark_network(3, 0).unwrap();
        assert_eq!(net.node_count(), 3);
        net.check_source_reachability().unwrap();
    }

    #[test]
    fn too_few_nodes_is_an_error() {
        assert!(generate_benchmark_network(2, 0).is_err());
    }

    #[test]
    fn benchmark_96_pipe_count_in_degree_band() {
        let net = generate_benchmark_network(96, 1).unwrap();
        assert_eq!(net.node_count(), 96);
        assert!(
            (96..=144).contains(&net.pipe_count()),
            "pipe count {} outside [96, 144]",
            net.pipe_count()
        );
        let avg_degree = 2.0 * net.pipe_count() as f64 / net.node_count() as f64;
        assert!((2.0..=3.0).contains(&avg_degree), "avg degree {avg_degree}");
        assert_eq!(net.sources().len(), 2);
    }

    #[test]
    fn same_seed_gives_byte_identical_serialization() {
        let a = serialize_network(&generate_benchmark_network(40, 9).unwrap());
        let b = serialize_network(&generate_benchmark_network(40, 9).unwrap());
        assert_eq!(a, b);
        let c = serialize_network(&generate_benchmark_network(40, 10).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn thousand_seeds_validate_and_reach_sources() {
        for seed_value in 0..1000u64 {
            let n = 3 + (seed_value as usize * 7) % 48;
            let net = generate_benchmark_network(n, seed_value).unwrap();
            net.check_source_reachability().unwrap();
            let avg_degree = 2.0 * net.pipe_count() as f64 / net.node_count() as f64;
            assert!(
                (2.0 - 1e-9..=3.0 + 1e-9).contains(&avg_degree),
                "seed {seed_value}: avg degree {avg_degree}"
            );
        }
    }

    #[test]
    fn neighbors_are_symmetric_and_never_self() {
        for seed_value in [0u64, 3, 11] {
            let net = generate_benchmark_network(30, seed_value).unwrap();
            for v in 0..net.node_count() {
                let nv = net.neighbors(v).unwrap();
                assert!(!nv.contains(&v));
                for &u in &nv {
                    assert!(net.neighbors(u).unwrap().contains(&v));
                }
            }
        }
    }
}
