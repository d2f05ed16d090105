//! Energy minimization for binary pairwise MRFs: exact enumeration for small
//! graphs, iterated conditional modes with restarts, and an exact min-cut
//! path for submodular instances.

use rand::Rng;

use crate::crf::LabelAssignment;
use crate::error::{Error, Result};
use crate::seed;

/// Hard cap for exact enumeration.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// A binary pairwise energy: per-node label costs plus one shared label-pair
/// cost table applied to every edge. Lower energy is better.
#[derive(Debug, Clone)]
pub struct BinaryMrf {
    unary: Vec<[f64; 2]>,
    pairwise: [[f64; 2]; 2],
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl BinaryMrf {
    pub fn new(
        unary: Vec<[f64; 2]>,
        pairwise: [[f64; 2]; 2],
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = unary.len();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::InvalidNode(u.max(v)));
            }
            if u == v {
                return Err(Error::Validation(format!("edge ({u}, {v}) is a self-loop")));
            }
        }
        if unary
            .iter()
            .flatten()
            .chain(pairwise.iter().flatten())
            .any(|c| !c.is_finite())
        {
            return Err(Error::Validation("energy tables must be finite".into()));
        }
        // the label graph is undirected, so the mixed costs must agree
        if pairwise[0][1] != pairwise[1][0] {
            return Err(Error::Validation(format!(
                "pairwise table must be symmetric: cost(0,1) = {} but cost(1,0) = {}",
                pairwise[0][1], pairwise[1][0]
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        Ok(BinaryMrf {
            unary,
            pairwise,
            edges,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.unary.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn unary(&self) -> &[[f64; 2]] {
        &self.unary
    }

    pub fn pairwise(&self) -> [[f64; 2]; 2] {
        self.pairwise
    }

    /// Subtract per-node bonuses from the energy; used to fold a
    /// node-decomposable loss into the unary terms.
    pub fn subtract_unary(&mut self, bonuses: &[[f64; 2]]) {
        for (u, b) in self.unary.iter_mut().zip(bonuses) {
            u[0] -= b[0];
            u[1] -= b[1];
        }
    }

    pub fn energy(&self, y: &LabelAssignment) -> Result<f64> {
        if y.len() != self.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "labeling covers {} nodes, energy model has {}",
                y.len(),
                self.node_count()
            )));
        }
        Ok(self.energy_of(y.labels()))
    }

    fn energy_of(&self, labels: &[u8]) -> f64 {
        let mut e = 0.0;
        for (v, &l) in labels.iter().enumerate() {
            e += self.unary[v][l as usize];
        }
        for &(u, v) in &self.edges {
            e += self.pairwise[labels[u] as usize][labels[v] as usize];
        }
        e
    }

    /// A pairwise table is submodular when agreeing labels are never more
    /// expensive than disagreeing ones; exactly then the min-cut path applies.
    pub fn is_submodular(&self) -> bool {
        self.pairwise[0][0] + self.pairwise[1][1] <= self.pairwise[0][1] + self.pairwise[1][0]
    }

    /// Score margin of label 1 vs label 0 at each node, conditioned on the
    /// given labels of its neighbors.
    pub fn conditioned_margins(&self, y: &LabelAssignment) -> Result<Vec<f64>> {
        if y.len() != self.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "labeling covers {} nodes, energy model has {}",
                y.len(),
                self.node_count()
            )));
        }
        let labels = y.labels();
        Ok((0..self.node_count())
            .map(|v| {
                let mut e0 = self.unary[v][0];
                let mut e1 = self.unary[v][1];
                for &u in &self.adjacency[v] {
                    e0 += self.pairwise[0][labels[u] as usize];
                    e1 += self.pairwise[1][labels[u] as usize];
                }
                e0 - e1
            })
            .collect())
    }
}

/// Exact minimum by enumeration, limited to [`BRUTE_FORCE_LIMIT`] nodes.
/// Ties resolve to the lexicographically smallest label vector.
pub fn brute_force_min(mrf: &BinaryMrf) -> Result<(LabelAssignment, f64)> {
    let n = mrf.node_count();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::GraphTooLarge {
            nodes: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best_labels = vec![0u8; n];
    let mut best_energy = f64::INFINITY;
    let mut labels = vec![0u8; n];
    // counting with node 0 as the most significant bit enumerates label
    // vectors in lexicographic order, so strict improvement keeps the
    // lexicographically smallest minimizer
    for code in 0u64..(1u64 << n) {
        for v in 0..n {
            labels[v] = ((code >> (n - 1 - v)) & 1) as u8;
        }
        let e = mrf.energy_of(&labels);
        if e < best_energy {
            best_energy = e;
            best_labels.copy_from_slice(&labels);
        }
    }
    Ok((LabelAssignment::new(best_labels)?, best_energy))
}

/// Iterated conditional modes from a start labeling: sweep nodes in index
/// order, flip a label when that strictly lowers the energy, stop at a sweep
/// with no flips.
pub fn icm_min(mrf: &BinaryMrf, start: &LabelAssignment, max_sweeps: usize) -> LabelAssignment {
    let mut labels = start.labels().to_vec();
    for _ in 0..max_sweeps {
        let mut changed = false;
        for v in 0..mrf.node_count() {
            let l = labels[v] as usize;
            let flip = 1 - l;
            let mut delta = mrf.unary[v][flip] - mrf.unary[v][l];
            for &u in &mrf.adjacency[v] {
                let lu = labels[u] as usize;
                delta += mrf.pairwise[flip][lu] - mrf.pairwise[l][lu];
            }
            if delta < 0.0 {
                labels[v] = flip as u8;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    LabelAssignment::new(labels).expect("labels stay binary")
}

/// Exact minimum via st-min-cut; `None` when the instance is not submodular.
pub fn mincut_min(mrf: &BinaryMrf) -> Option<LabelAssignment> {
    if !mrf.is_submodular() {
        return None;
    }
    let n = mrf.node_count();
    // Reparametrize each edge energy E(xu, xv) with A=E(0,0), B=E(0,1),
    // C=E(1,0), D=E(1,1) as A + (C−A)·xu + (D−C)·xv + (B+C−A−D)·(1−xu)·xv.
    // The last coefficient is nonnegative exactly when submodular and
    // becomes an arc u→v; the linear terms join the node potentials.
    let [[a, b], [c, d]] = mrf.pairwise;
    let lambda = b + c - a - d;
    let mut potential: Vec<f64> = (0..n).map(|v| mrf.unary[v][1] - mrf.unary[v][0]).collect();
    let mut graph = Dinic::new(n + 2);
    let source = n;
    let sink = n + 1;
    for &(u, v) in &mrf.edges {
        potential[u] += c - a;
        potential[v] += d - c;
        if lambda > 0.0 {
            graph.add_edge(u, v, lambda);
        }
    }
    for (v, &p) in potential.iter().enumerate() {
        if p >= 0.0 {
            graph.add_edge(source, v, p);
        } else {
            graph.add_edge(v, sink, -p);
        }
    }
    graph.max_flow(source, sink);
    let source_side = graph.reachable_from(source);
    let labels: Vec<u8> = (0..n).map(|v| u8::from(!source_side[v])).collect();
    Some(LabelAssignment::new(labels).expect("labels are binary"))
}

/// Best labeling across the configured solver battery: the min-cut result
/// when the instance is submodular (exact), otherwise ICM from the all-zeros
/// start, the provided extra starts, and `restarts` random starts. The raw
/// all-zeros and all-ones labelings always compete. Ties resolve to the
/// lexicographically smallest labels. Deterministic for a fixed seed.
pub fn solve_min(
    mrf: &BinaryMrf,
    config: &InferenceConfig,
    extra_starts: &[&LabelAssignment],
) -> LabelAssignment {
    let n = mrf.node_count();
    let mut candidates: Vec<LabelAssignment> = Vec::new();
    candidates.push(LabelAssignment::all_zeros(n));
    candidates.push(LabelAssignment::all_ones(n));
    if let Some(exact) = mincut_min(mrf) {
        candidates.push(exact);
    } else {
        candidates.push(icm_min(mrf, &LabelAssignment::all_zeros(n), config.max_sweeps));
        for &start in extra_starts {
            candidates.push(icm_min(mrf, start, config.max_sweeps));
        }
        let mut rng = seed::rng(config.seed);
        for _ in 0..config.restarts {
            let start = LabelAssignment::new(
                (0..n).map(|_| rng.random_range(0..2u8)).collect(),
            )
            .expect("random labels are binary");
            candidates.push(icm_min(mrf, &start, config.max_sweeps));
        }
    }
    candidates
        .into_iter()
        .map(|y| {
            let e = mrf.energy_of(y.labels());
            (y, e)
        })
        .min_by(|(ya, ea), (yb, eb)| {
            ea.partial_cmp(eb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ya.labels().cmp(yb.labels()))
        })
        .map(|(y, _)| y)
        .expect("candidate list is never empty")
}

/// Knobs for the heuristic solver path.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    /// Random ICM restarts used when the min-cut path does not apply.
    pub restarts: usize,
    pub seed: u64,
    pub max_sweeps: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            restarts: 20,
            seed: 0,
            max_sweeps: 100,
        }
    }
}

const FLOW_EPS: f64 = 1e-12;

/// Dinic max-flow on float capacities.
struct Dinic {
    // per node: indices into `to`/`cap`
    heads: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    cursor: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic {
            heads: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![-1; n],
            cursor: vec![0; n],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, capacity: f64) {
        self.heads[from].push(self.to.len());
        self.to.push(to);
        self.cap.push(capacity);
        self.heads[to].push(self.to.len());
        self.to.push(from);
        self.cap.push(0.0);
    }

    fn bfs(&mut self, source: usize, sink: usize) -> bool {
        self.level.fill(-1);
        self.level[source] = 0;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.heads[u] {
                let v = self.to[e];
                if self.cap[e] > FLOW_EPS && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[sink] >= 0
    }

    fn dfs(&mut self, u: usize, sink: usize, pushed: f64) -> f64 {
        if u == sink {
            return pushed;
        }
        while self.cursor[u] < self.heads[u].len() {
            let e = self.heads[u][self.cursor[u]];
            let v = self.to[e];
            if self.cap[e] > FLOW_EPS && self.level[v] == self.level[u] + 1 {
                let flow = self.dfs(v, sink, pushed.min(self.cap[e]));
                if flow > FLOW_EPS {
                    self.cap[e] -= flow;
                    self.cap[e ^ 1] += flow;
                    return flow;
                }
            }
            self.cursor[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(source, sink) {
            self.cursor.fill(0);
            loop {
                let flow = self.dfs(source, sink, f64::INFINITY);
                if flow <= FLOW_EPS {
                    break;
                }
                total += flow;
            }
        }
        total
    }

    /// Nodes reachable from `from` through positive residual capacity.
    fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.heads.len()];
        seen[from] = true;
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.heads[u] {
                let v = self.to[e];
                if self.cap[e] > FLOW_EPS && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}
