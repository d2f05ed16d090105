//! From raw sensor observations to per-node feature vectors and the joint
//! feature map.
//!
//! Raw pressures are dominated by the diurnal demand pattern, so node
//! features are residuals against a no-leak baseline run of the same time
//! step, summarized over the sensors within k hops of the node. The joint
//! feature of a labeling stacks each node's features into the sub-block of
//! its label and appends edge label-pair counts, which makes the model score
//! `w·θ(x, y)` decompose exactly into per-node and per-edge tables.

use crate::crf::LabelAssignment;
use crate::error::{Error, Result};
use crate::hydrosim::{HydraulicState, SimulationResult};
use crate::network::{NodeId, SensorLayout, WaterNetwork};

/// Per-node feature dimension: [mean, min, max of k-hop residuals,
/// own pressure residual, bias].
pub const NODE_FEATURE_DIM: usize = 5;

/// Joint feature dimension: one unary block per label plus the four ordered
/// edge label-pair slots (the mixed slots are merged; see [`pairwise_slot`]).
pub const JOINT_FEATURE_DIM: usize = 2 * NODE_FEATURE_DIM + 4;

/// Offset of the pairwise block inside a joint feature vector.
pub const PAIRWISE_OFFSET: usize = 2 * NODE_FEATURE_DIM;

pub type NodeFeatureVector = [f64; NODE_FEATURE_DIM];

/// One recorded sensor vector: pressures at pressure sensors then flows at
/// flow sensors, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub values: Vec<f64>,
    pub step: usize,
    pub layout_fingerprint: u64,
}

/// An observation paired with the no-leak baseline observation of the same
/// step; the unit consumed by inference and training.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    pub observation: ObservationVector,
    pub baseline: ObservationVector,
}

impl SampleInput {
    pub fn new(observation: ObservationVector, baseline: ObservationVector) -> Result<Self> {
        if observation.layout_fingerprint != baseline.layout_fingerprint
            || observation.values.len() != baseline.values.len()
        {
            return Err(Error::LayoutMismatch(
                "observation and baseline were recorded under different sensor layouts".into(),
            ));
        }
        Ok(SampleInput {
            observation,
            baseline,
        })
    }
}

/// Read the layout's sensors straight out of a solved state. Pressure
/// sensors report pressure head (head − elevation, m); flow sensors report
/// signed pipe flow (L/s).
pub fn observation_from_state(
    state: &HydraulicState,
    net: &WaterNetwork,
    layout: &SensorLayout,
    step: usize,
) -> ObservationVector {
    let mut values = Vec::with_capacity(layout.len());
    for &v in layout.pressure_sensors() {
        values.push(state.heads[v] - net.nodes()[v].elevation);
    }
    for &p in layout.flow_sensors() {
        values.push(state.flows[p]);
    }
    ObservationVector {
        values,
        step,
        layout_fingerprint: layout.fingerprint(),
    }
}

/// The recorded observation of a simulated day at one step.
pub fn extract_observations(
    result: &SimulationResult,
    layout: &SensorLayout,
    step: usize,
) -> Result<ObservationVector> {
    let obs = result.observations.get(step).ok_or_else(|| {
        Error::Validation(format!(
            "step {step} outside the simulated range [0, {})",
            result.observations.len()
        ))
    })?;
    if obs.layout_fingerprint != layout.fingerprint() {
        return Err(Error::LayoutMismatch(format!(
            "simulation was recorded under layout {:016x}, requested {:016x}",
            obs.layout_fingerprint,
            layout.fingerprint()
        )));
    }
    Ok(obs.clone())
}

/// Precomputed sensor neighborhoods for one (network, layout, k) triple.
/// Building it once and reusing it across samples avoids re-running the hop
/// searches in training loops.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    k: usize,
    layout_fingerprint: u64,
    dimension: usize,
    /// Observation columns within k hops of each node.
    hood_columns: Vec<Vec<usize>>,
    /// Column of the node's own pressure sensor, if any.
    own_column: Vec<Option<usize>>,
}

impl FeatureContext {
    pub fn new(net: &WaterNetwork, layout: &SensorLayout, k: usize) -> Result<Self> {
        let mut hood_columns = Vec::with_capacity(net.node_count());
        let mut own_column = Vec::with_capacity(net.node_count());
        for v in 0..net.node_count() {
            let hops = net.hop_distances(v)?;
            let mut columns = Vec::new();
            for (col, &node) in layout.pressure_sensors().iter().enumerate() {
                if hops[node] <= k {
                    columns.push(col);
                }
            }
            let base = layout.pressure_sensors().len();
            for (offset, &pipe) in layout.flow_sensors().iter().enumerate() {
                let (a, b) = net.pipes()[pipe].endpoints;
                if hops[a].min(hops[b]) <= k {
                    columns.push(base + offset);
                }
            }
            hood_columns.push(columns);
            own_column.push(layout.pressure_column(v));
        }
        Ok(FeatureContext {
            k,
            layout_fingerprint: layout.fingerprint(),
            dimension: layout.len(),
            hood_columns,
            own_column,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn layout_fingerprint(&self) -> u64 {
        self.layout_fingerprint
    }

    fn check_input(&self, input: &SampleInput) -> Result<()> {
        if input.observation.layout_fingerprint != self.layout_fingerprint
            || input.observation.values.len() != self.dimension
        {
            return Err(Error::LayoutMismatch(
                "sample was recorded under a different sensor layout than this feature context"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Features of one node: [mean, min, max] of the k-hop residuals (zeros
    /// when no sensor is in range), the node's own pressure residual (zero
    /// if unsensed), and a bias of 1.
    pub fn node_features(&self, input: &SampleInput, v: NodeId) -> Result<NodeFeatureVector> {
        self.check_input(input)?;
        if v >= self.hood_columns.len() {
            return Err(Error::InvalidNode(v));
        }
        Ok(self.node_features_unchecked(input, v))
    }

    fn node_features_unchecked(&self, input: &SampleInput, v: NodeId) -> NodeFeatureVector {
        let residual =
            |col: usize| input.observation.values[col] - input.baseline.values[col];
        let columns = &self.hood_columns[v];
        let (mut sum, mut min, mut max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
        for &col in columns {
            let r = residual(col);
            sum += r;
            min = min.min(r);
            max = max.max(r);
        }
        let (mean, min, max) = if columns.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (sum / columns.len() as f64, min, max)
        };
        let own = self.own_column[v].map_or(0.0, residual);
        [mean, min, max, own, 1.0]
    }

    /// Feature vectors for every node of the network.
    pub fn all_node_features(&self, input: &SampleInput) -> Result<Vec<NodeFeatureVector>> {
        self.check_input(input)?;
        Ok((0..self.hood_columns.len())
            .map(|v| self.node_features_unchecked(input, v))
            .collect())
    }
}

/// One-off node features; builds the hop search for a single node. Prefer
/// [`FeatureContext`] in loops.
pub fn node_features(
    x: &ObservationVector,
    baseline: &ObservationVector,
    net: &WaterNetwork,
    layout: &SensorLayout,
    v: NodeId,
    k: usize,
) -> Result<NodeFeatureVector> {
    let ctx = FeatureContext::new(net, layout, k)?;
    let input = SampleInput::new(x.clone(), baseline.clone())?;
    ctx.node_features(&input, v)
}

/// The joint feature θ(x, y).
#[derive(Debug, Clone, PartialEq)]
pub struct JointFeature {
    pub values: Vec<f64>,
}

/// Pairwise feature slot of an edge label pair. The model is undirected, so
/// (0,1) and (1,0) share slot 1; slot 2 is kept so the block enumerates the
/// four ordered pairs but is never populated.
pub fn pairwise_slot(a: u8, b: u8) -> usize {
    match (a.min(b), a.max(b)) {
        (0, 0) => 0,
        (0, 1) => 1,
        _ => 3,
    }
}

/// Assemble θ(x, y) from precomputed node features: each node's features go
/// into the unary sub-block of its label, and each open edge increments its
/// label-pair count.
pub fn joint_feature_from_node_features(
    net: &WaterNetwork,
    node_features: &[NodeFeatureVector],
    y: &LabelAssignment,
) -> Result<JointFeature> {
    if y.labels().len() != net.node_count() || node_features.len() != net.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "labeling covers {} nodes, features {}, network has {}",
            y.labels().len(),
            node_features.len(),
            net.node_count()
        )));
    }
    let mut values = vec![0.0f64; JOINT_FEATURE_DIM];
    for (v, features) in node_features.iter().enumerate() {
        let offset = y.labels()[v] as usize * NODE_FEATURE_DIM;
        for (i, &f) in features.iter().enumerate() {
            values[offset + i] += f;
        }
    }
    for (u, v) in net.open_edges() {
        values[PAIRWISE_OFFSET + pairwise_slot(y.labels()[u], y.labels()[v])] += 1.0;
    }
    Ok(JointFeature { values })
}

/// θ(x, y) from a raw sample.
pub fn joint_feature(
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
    y: &LabelAssignment,
    k: usize,
) -> Result<JointFeature> {
    let ctx = FeatureContext::new(net, layout, k)?;
    let features = ctx.all_node_features(input)?;
    joint_feature_from_node_features(net, &features, y)
}

pub fn dot(w: &[f64], theta: &JointFeature) -> Result<f64> {
    if w.len() != theta.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has dimension {}, joint feature {}",
            w.len(),
            theta.values.len()
        )));
    }
    Ok(w.iter().zip(&theta.values).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydrosim::{generate_patterns, simulate, LeakEvent, Scenario};
    use crate::network::generate_benchmark_network;
    use rand::Rng;

    fn tiny_setup() -> (WaterNetwork, SensorLayout) {
        let net = generate_benchmark_network(8, 2).unwrap();
        let layout = SensorLayout::full(&net);
        (net, layout)
    }

    fn sample_from(values: Vec<f64>, baseline: Vec<f64>, layout: &SensorLayout) -> SampleInput {
        SampleInput::new(
            ObservationVector {
                values,
                step: 95,
                layout_fingerprint: layout.fingerprint(),
            },
            ObservationVector {
                values: baseline,
                step: 95,
                layout_fingerprint: layout.fingerprint(),
            },
        )
        .unwrap()
    }

    #[test]
    fn observation_order_is_pressures_then_flows() {
        let net = generate_benchmark_network(6, 1).unwrap();
        let layout = SensorLayout::new(&net, vec![3, 0], vec![1]).unwrap();
        let state = HydraulicState {
            heads: (0..6).map(|v| 40.0 + v as f64).collect(),
            flows: (0..net.pipe_count()).map(|p| p as f64).collect(),
        };
        let obs = observation_from_state(&state, &net, &layout, 7);
        assert_eq!(obs.values.len(), 3);
        assert_eq!(obs.values[0], 43.0 - net.nodes()[3].elevation);
        assert_eq!(obs.values[1], 40.0 - net.nodes()[0].elevation);
        assert_eq!(obs.values[2], 1.0);
        assert_eq!(obs.step, 7);
    }

    #[test]
    fn full_layout_length_is_nodes_plus_pipes() {
        let net = generate_benchmark_network(96, 1).unwrap();
        let layout = SensorLayout::full(&net);
        assert_eq!(layout.len(), net.node_count() + net.pipe_count());
    }

    #[test]
    fn equal_observation_and_baseline_gives_zero_residuals_and_bias_one() {
        let (net, layout) = tiny_setup();
        let values: Vec<f64> = (0..layout.len()).map(|i| i as f64).collect();
        let input = sample_from(values.clone(), values, &layout);
        let ctx = FeatureContext::new(&net, &layout, 2).unwrap();
        for v in 0..net.node_count() {
            let f = ctx.node_features(&input, v).unwrap();
            assert_eq!(f, [0.0, 0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn unsensed_node_at_k_zero_has_only_bias() {
        let net = generate_benchmark_network(8, 2).unwrap();
        // sensors only at node 0 and only on a pipe not touching node chosen
        let far_node = (1..net.node_count())
            .find(|&v| net.hop_distances(0).unwrap()[v] >= 2)
            .unwrap();
        let some_pipe = net
            .pipes()
            .iter()
            .find(|p| p.endpoints.0 != far_node && p.endpoints.1 != far_node)
            .unwrap()
            .id;
        let layout = SensorLayout::new(&net, vec![0], vec![some_pipe]).unwrap();
        let input = sample_from(vec![10.0, 5.0], vec![8.0, 1.0], &layout);
        let ctx = FeatureContext::new(&net, &layout, 0).unwrap();
        let f = ctx.node_features(&input, far_node).unwrap();
        assert_eq!(f, [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn layout_mismatch_is_caught() {
        let (net, layout) = tiny_setup();
        let other = SensorLayout::new(&net, vec![0, 1], vec![]).unwrap();
        let values: Vec<f64> = (0..layout.len()).map(|i| i as f64).collect();
        let input = sample_from(values.clone(), values, &layout);
        let ctx = FeatureContext::new(&net, &other, 2).unwrap();
        assert!(matches!(
            ctx.node_features(&input, 0),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn leak_with_own_sensor_gives_negative_own_residual() {
        let net = generate_benchmark_network(16, 4).unwrap();
        let layout = SensorLayout::full(&net);
        let patterns = generate_patterns(3, 1);
        let node = net.junctions()[3];
        let scenario = Scenario::new(
            vec![LeakEvent {
                node,
                emitter_coeff: 1.0,
                start_step: 0,
            }],
            9,
        )
        .unwrap();
        let leaky = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        let quiet = simulate(&net, &Scenario::no_leak(9), &patterns, &layout, 0.0).unwrap();
        let input = SampleInput::new(
            extract_observations(&leaky, &layout, 95).unwrap(),
            extract_observations(&quiet, &layout, 95).unwrap(),
        )
        .unwrap();
        let ctx = FeatureContext::new(&net, &layout, 2).unwrap();
        let f = ctx.node_features(&input, node).unwrap();
        assert!(f[3] < 0.0, "own residual {} should be negative", f[3]);
    }

    #[test]
    fn all_zero_labeling_fills_only_label_zero_block() {
        let (net, layout) = tiny_setup();
        let values: Vec<f64> = (0..layout.len()).map(|i| (i as f64).sin()).collect();
        let baseline: Vec<f64> = (0..layout.len()).map(|i| (i as f64).cos()).collect();
        let input = sample_from(values, baseline, &layout);
        let y = LabelAssignment::all_zeros(net.node_count());
        let theta = joint_feature(&net, &layout, &input, &y, 2).unwrap();
        assert_eq!(theta.values.len(), JOINT_FEATURE_DIM);
        for i in NODE_FEATURE_DIM..2 * NODE_FEATURE_DIM {
            assert_eq!(theta.values[i], 0.0, "label-1 block index {i}");
        }
        assert_eq!(
            theta.values[PAIRWISE_OFFSET],
            net.open_edges().len() as f64
        );
        assert_eq!(theta.values[PAIRWISE_OFFSET + 1], 0.0);
        assert_eq!(theta.values[PAIRWISE_OFFSET + 2], 0.0);
        assert_eq!(theta.values[PAIRWISE_OFFSET + 3], 0.0);
    }

    #[test]
    fn flipping_one_label_moves_exactly_that_nodes_features() {
        let (net, layout) = tiny_setup();
        let values: Vec<f64> = (0..layout.len()).map(|i| (i as f64).sin()).collect();
        let baseline = vec![0.0; layout.len()];
        let input = sample_from(values, baseline, &layout);
        let ctx = FeatureContext::new(&net, &layout, 1).unwrap();
        let features = ctx.all_node_features(&input).unwrap();

        let v = 3;
        let y0 = LabelAssignment::all_zeros(net.node_count());
        let mut flipped = y0.labels().to_vec();
        flipped[v] = 1;
        let y1 = LabelAssignment::new(flipped).unwrap();

        let t0 = joint_feature_from_node_features(&net, &features, &y0).unwrap();
        let t1 = joint_feature_from_node_features(&net, &features, &y1).unwrap();
        for i in 0..NODE_FEATURE_DIM {
            let moved = t0.values[i] - t1.values[i];
            assert!((moved - features[v][i]).abs() < 1e-12);
            assert!((t1.values[NODE_FEATURE_DIM + i] - features[v][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn score_decomposes_into_unary_and_pairwise_terms() {
        let (net, layout) = tiny_setup();
        let mut rng = crate::seed::rng(31);
        for _ in 0..20 {
            let values: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let baseline: Vec<f64> =
                (0..layout.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let input = sample_from(values, baseline, &layout);
            let w: Vec<f64> = (0..JOINT_FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels: Vec<u8> = (0..net.node_count()).map(|_| rng.random_range(0..2u8)).collect();
            let y = LabelAssignment::new(labels).unwrap();

            let ctx = FeatureContext::new(&net, &layout, 2).unwrap();
            let features = ctx.all_node_features(&input).unwrap();
            let theta = joint_feature_from_node_features(&net, &features, &y).unwrap();
            let via_theta = dot(&w, &theta).unwrap();

            // independent term-by-term evaluation
            let mut direct = 0.0;
            for v in 0..net.node_count() {
                let offset = y.labels()[v] as usize * NODE_FEATURE_DIM;
                for i in 0..NODE_FEATURE_DIM {
                    direct += w[offset + i] * features[v][i];
                }
            }
            for (u, v) in net.open_edges() {
                direct += w[PAIRWISE_OFFSET + pairwise_slot(y.labels()[u], y.labels()[v])];
            }
            assert!(
                (via_theta - direct).abs() < 1e-9,
                "decomposition mismatch: {via_theta} vs {direct}"
            );
        }
    }

    #[test]
    fn permuting_sensor_order_leaves_node_features_unchanged() {
        let net = generate_benchmark_network(10, 6).unwrap();
        let layout_a = SensorLayout::new(&net, vec![0, 2, 4, 6], vec![1, 3]).unwrap();
        let layout_b = SensorLayout::new(&net, vec![6, 0, 4, 2], vec![3, 1]).unwrap();
        let mut rng = crate::seed::rng(8);
        let vals_a: Vec<f64> = (0..layout_a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base_a: Vec<f64> = (0..layout_a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        // rebuild the same readings under layout_b's order
        let remap = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for (col_b, &node) in layout_b.pressure_sensors().iter().enumerate() {
                out[col_b] = src[layout_a.pressure_column(node).unwrap()];
            }
            for (i, &pipe) in layout_b.flow_sensors().iter().enumerate() {
                out[layout_b.pressure_sensors().len() + i] =
                    src[layout_a.flow_column(pipe).unwrap()];
            }
            out
        };
        let input_a = sample_from(vals_a.clone(), base_a.clone(), &layout_a);
        let input_b = sample_from(remap(&vals_a), remap(&base_a), &layout_b);
        let ctx_a = FeatureContext::new(&net, &layout_a, 2).unwrap();
        let ctx_b = FeatureContext::new(&net, &layout_b, 2).unwrap();
        for v in 0..net.node_count() {
            let fa = ctx_a.node_features(&input_a, v).unwrap();
            let fb = ctx_b.node_features(&input_b, v).unwrap();
            for i in 0..NODE_FEATURE_DIM {
                assert!((fa[i] - fb[i]).abs() < 1e-12, "node {v} feature {i}");
            }
        }
    }
}
