//! Water-network graph model: nodes (pipe joints), pipes, fixed-head sources,
//! and sensor layouts.
//!
//! A network is immutable once constructed, so it can be shared read-only
//! across worker threads. Leak events are attached to nodes, not pipes.

mod format;
mod generate;

pub use format::{
    load_network, parse_network, save_network, serialize_network, NETWORK_FORMAT_VERSION,
};
pub use generate::generate_benchmark_network;

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type PipeId = usize;

/// A junction node. Coordinates are meters in a local planar frame; the
/// clique radius used by report fusion is measured in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    /// Planar position (x, y) in meters.
    pub coord: [f64; 2],
    /// Elevation in meters.
    pub elevation: f64,
    /// Base consumption in L/s, scaled per step by the demand pattern.
    pub base_demand: f64,
    pub demand_pattern_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeStatus {
    Open,
    Closed,
}

impl PipeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PipeStatus::Open => "open",
            PipeStatus::Closed => "closed",
        }
    }
}

/// A pipe between two distinct nodes with Hazen-Williams attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeRecord {
    pub id: PipeId,
    /// Unordered endpoint pair; flow sign is relative to this stored order.
    pub endpoints: (NodeId, NodeId),
    /// Length in meters.
    pub length: f64,
    /// Inner diameter in meters.
    pub diameter: f64,
    /// Hazen-Williams roughness coefficient, dimensionless, in [50, 200].
    pub roughness: f64,
    pub status: PipeStatus,
}

/// A fixed hydraulic head boundary (tank or reservoir surface).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRecord {
    pub node: NodeId,
    /// Fixed hydraulic head in meters.
    pub head: f64,
}

/// The network graph. Node ids are contiguous from 0 and index directly into
/// `nodes`; likewise for pipes.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterNetwork {
    nodes: Vec<NodeRecord>,
    pipes: Vec<PipeRecord>,
    sources: Vec<SourceRecord>,
    /// adjacency[v] = (pipe id, other endpoint) for every pipe touching v,
    /// regardless of status.
    adjacency: Vec<Vec<(PipeId, NodeId)>>,
}

impl WaterNetwork {
    /// Build and validate a network. Fails with a message naming the violated
    /// invariant.
    pub fn new(
        nodes: Vec<NodeRecord>,
        pipes: Vec<PipeRecord>,
        sources: Vec<SourceRecord>,
    ) -> Result<Self> {
        validate(&nodes, &pipes, &sources)?;
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for pipe in &pipes {
            let (u, v) = pipe.endpoints;
            adjacency[u].push((pipe.id, v));
            adjacency[v].push((pipe.id, u));
        }
        Ok(WaterNetwork {
            nodes,
            pipes,
            sources,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn pipes(&self) -> &[PipeRecord] {
        &self.pipes
    }

    pub fn sources(&self) -> &[SourceRecord] {
        &self.sources
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn pipe_count(&self) -> usize {
        self.pipes.len()
    }

    pub fn is_source(&self, v: NodeId) -> bool {
        self.sources.iter().any(|s| s.node == v)
    }

    /// Fixed head of a source node, if v is one.
    pub fn source_head(&self, v: NodeId) -> Option<f64> {
        self.sources.iter().find(|s| s.node == v).map(|s| s.head)
    }

    /// Node ids that are not sources. Leaks and demands live here.
    pub fn junctions(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&v| !self.is_source(v))
            .collect()
    }

    /// All pipes touching v, including closed ones.
    pub fn incident(&self, v: NodeId) -> Result<&[(PipeId, NodeId)]> {
        self.adjacency
            .get(v)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidNode(v))
    }

    /// Nodes sharing an open pipe with v. Symmetric by construction.
    pub fn neighbors(&self, v: NodeId) -> Result<BTreeSet<NodeId>> {
        let incident = self.incident(v)?;
        Ok(incident
            .iter()
            .filter(|(p, _)| self.pipes[*p].status == PipeStatus::Open)
            .map(|&(_, u)| u)
            .collect())
    }

    /// Undirected edges (u, v) with u < v over open pipes, deduplicated.
    /// Parallel open pipes contribute a single edge to the label graph.
    pub fn open_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for pipe in &self.pipes {
            if pipe.status == PipeStatus::Open {
                let (u, v) = pipe.endpoints;
                edges.insert((u.min(v), u.max(v)));
            }
        }
        edges.into_iter().collect()
    }

    /// Euclidean distance between a point and a node.
    pub fn distance_to_node(&self, point: [f64; 2], v: NodeId) -> f64 {
        let c = self.nodes[v].coord;
        ((point[0] - c[0]).powi(2) + (point[1] - c[1]).powi(2)).sqrt()
    }

    /// Axis-aligned bounding box of all node coordinates.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for n in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(n.coord[d]);
                hi[d] = hi[d].max(n.coord[d]);
            }
        }
        (lo, hi)
    }

    /// Hop distances from v over open pipes. Unreachable nodes get `usize::MAX`.
    pub fn hop_distances(&self, v: NodeId) -> Result<Vec<usize>> {
        if v >= self.nodes.len() {
            return Err(Error::InvalidNode(v));
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[v] = 0;
        let mut queue = std::collections::VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &(p, w) in &self.adjacency[u] {
                if self.pipes[p].status == PipeStatus::Open && dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Check that every node can be reached from some source through open
    /// pipes. Required before hydraulic simulation, not at load time.
    pub fn check_source_reachability(&self) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: std::collections::VecDeque<NodeId> =
            self.sources.iter().map(|s| s.node).collect();
        for s in &self.sources {
            seen[s.node] = true;
        }
        while let Some(u) = queue.pop_front() {
            for &(p, w) in &self.adjacency[u] {
                if self.pipes[p].status == PipeStatus::Open && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        match seen.iter().position(|&s| !s) {
            Some(v) => Err(Error::Unreachable(v)),
            None => Ok(()),
        }
    }
}

fn validate(nodes: &[NodeRecord], pipes: &[PipeRecord], sources: &[SourceRecord]) -> Result<()> {
    for (i, node) in nodes.iter().enumerate() {
        if node.id != i {
            return Err(Error::Validation(format!(
                "node ids must be contiguous from 0: position {i} holds node id {}",
                node.id
            )));
        }
        if !node.coord.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation(format!(
                "node {i}: coordinates must be finite"
            )));
        }
        if !node.elevation.is_finite() {
            return Err(Error::Validation(format!(
                "node {i}: elevation must be finite"
            )));
        }
        if !(node.base_demand >= 0.0) {
            return Err(Error::Validation(format!(
                "node {i}: base_demand must be >= 0, got {}",
                node.base_demand
            )));
        }
    }
    for (i, pipe) in pipes.iter().enumerate() {
        if pipe.id != i {
            return Err(Error::Validation(format!(
                "pipe ids must be contiguous from 0: position {i} holds pipe id {}",
                pipe.id
            )));
        }
        let (u, v) = pipe.endpoints;
        if u == v {
            return Err(Error::Validation(format!(
                "pipe {i}: endpoints must be distinct, got ({u}, {v})"
            )));
        }
        if u >= nodes.len() || v >= nodes.len() {
            return Err(Error::Validation(format!(
                "pipe {i}: endpoint ({u}, {v}) is not a valid node id"
            )));
        }
        if !(pipe.length > 0.0) {
            return Err(Error::Validation(format!(
                "pipe {i}: length must be > 0, got {}",
                pipe.length
            )));
        }
        if !(pipe.diameter > 0.0) {
            return Err(Error::Validation(format!(
                "pipe {i}: diameter must be > 0, got {}",
                pipe.diameter
            )));
        }
        if !(50.0..=200.0).contains(&pipe.roughness) {
            return Err(Error::Validation(format!(
                "pipe {i}: roughness must be in [50, 200], got {}",
                pipe.roughness
            )));
        }
    }
    if sources.is_empty() {
        return Err(Error::Validation(
            "network must declare at least one source".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for s in sources {
        if s.node >= nodes.len() {
            return Err(Error::Validation(format!(
                "source node {} is not a valid node id",
                s.node
            )));
        }
        if !s.head.is_finite() {
            return Err(Error::Validation(format!(
                "source node {}: head must be finite",
                s.node
            )));
        }
        if !seen.insert(s.node) {
            return Err(Error::Validation(format!(
                "source node {} listed more than once",
                s.node
            )));
        }
    }
    Ok(())
}

/// Which observations are recorded: pressure heads at nodes, flows on pipes.
/// The vector order of an observation is pressure sensors first, then flow
/// sensors, each in the order stored here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorLayout {
    pressure_sensors: Vec<NodeId>,
    flow_sensors: Vec<PipeId>,
}

impl SensorLayout {
    pub fn new(
        net: &WaterNetwork,
        pressure_sensors: Vec<NodeId>,
        flow_sensors: Vec<PipeId>,
    ) -> Result<Self> {
        let mut seen_nodes = BTreeSet::new();
        for &v in &pressure_sensors {
            if v >= net.node_count() {
                return Err(Error::InvalidNode(v));
            }
            if !seen_nodes.insert(v) {
                return Err(Error::Validation(format!(
                    "pressure sensor at node {v} listed more than once"
                )));
            }
        }
        let mut seen_pipes = BTreeSet::new();
        for &p in &flow_sensors {
            if p >= net.pipe_count() {
                return Err(Error::InvalidPipe(p));
            }
            if !seen_pipes.insert(p) {
                return Err(Error::Validation(format!(
                    "flow sensor on pipe {p} listed more than once"
                )));
            }
        }
        Ok(SensorLayout {
            pressure_sensors,
            flow_sensors,
        })
    }

    /// Pressure sensors at every node and flow sensors on every pipe.
    pub fn full(net: &WaterNetwork) -> Self {
        SensorLayout {
            pressure_sensors: (0..net.node_count()).collect(),
            flow_sensors: (0..net.pipe_count()).collect(),
        }
    }

    pub fn pressure_sensors(&self) -> &[NodeId] {
        &self.pressure_sensors
    }

    pub fn flow_sensors(&self) -> &[PipeId] {
        &self.flow_sensors
    }

    /// Observation dimensionality: |pressure sensors| + |flow sensors|.
    pub fn len(&self) -> usize {
        self.pressure_sensors.len() + self.flow_sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column of the pressure sensor at node v, if one exists.
    pub fn pressure_column(&self, v: NodeId) -> Option<usize> {
        self.pressure_sensors.iter().position(|&n| n == v)
    }

    /// Column of the flow sensor on pipe p, if one exists.
    pub fn flow_column(&self, p: PipeId) -> Option<usize> {
        self.flow_sensors
            .iter()
            .position(|&q| q == p)
            .map(|i| self.pressure_sensors.len() + i)
    }

    /// Stable FNV-1a fingerprint of the layout, recorded in observation
    /// vectors and model files to catch layout mixups.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        };
        eat(self.pressure_sensors.len() as u64);
        for &v in &self.pressure_sensors {
            eat(v as u64);
        }
        eat(self.flow_sensors.len() as u64);
        for &p in &self.flow_sensors {
            eat(p as u64);
        }
        hash
    }

    /// Column labels in observation order: `p<node>` then `f<pipe>`.
    pub fn column_names(&self) -> Vec<String> {
        self.pressure_sensors
            .iter()
            .map(|v| format!("p{v}"))
            .chain(self.flow_sensors.iter().map(|p| format!("f{p}")))
            .collect()
    }
}
