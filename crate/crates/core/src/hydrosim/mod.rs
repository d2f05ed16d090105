//! Synthetic observation generation: a day of steady-state hydraulics at
//! 15-minute resolution, with randomly injected leak events.

mod simio;
pub mod solver;

pub use simio::{load_simulation, save_simulation, PersistedSimulation, SIM_FORMAT_VERSION};
pub use solver::{
    emitter_flow, hazen_williams_loss, pipe_resistance, solve_steady_state,
    solve_steady_state_warm, verify_state, HydraulicState, StateCheck, HW_COEFF_SI, HW_EXPONENT,
    MASS_TOLERANCE_LPS,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::crf::LabelAssignment;
use crate::error::{Error, Result};
use crate::features::{observation_from_state, ObservationVector};
use crate::network::{NodeId, SensorLayout, WaterNetwork};
use crate::seed::{self, stream};

/// Steps per simulated day: 24 h at a 15-minute sensor sampling period.
pub const STEPS_PER_DAY: usize = 96;

/// Per-node diurnal demand multipliers, one per 15-minute step.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandPattern {
    pub id: usize,
    pub multipliers: Vec<f64>,
}

impl DemandPattern {
    pub fn new(id: usize, multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.len() != STEPS_PER_DAY {
            return Err(Error::Validation(format!(
                "demand pattern {id}: needs exactly {STEPS_PER_DAY} multipliers, got {}",
                multipliers.len()
            )));
        }
        if multipliers.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Validation(format!(
                "demand pattern {id}: multipliers must be finite and >= 0"
            )));
        }
        let mean = multipliers.iter().sum::<f64>() / STEPS_PER_DAY as f64;
        if !(0.5..=1.5).contains(&mean) {
            return Err(Error::Validation(format!(
                "demand pattern {id}: mean multiplier {mean} outside [0.5, 1.5]"
            )));
        }
        Ok(DemandPattern { id, multipliers })
    }

    /// Flat pattern (all multipliers 1).
    pub fn flat(id: usize) -> Self {
        DemandPattern {
            id,
            multipliers: vec![1.0; STEPS_PER_DAY],
        }
    }
}

/// Smooth diurnal patterns (two harmonics plus jitter), normalized to unit
/// mean. Deterministic per seed.
pub fn generate_patterns(count: usize, seed_value: u64) -> Vec<DemandPattern> {
    let mut rng = seed::rng(seed_value);
    (0..count)
        .map(|id| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let phase2 = rng.random_range(0.0..std::f64::consts::TAU);
            let amp1 = rng.random_range(0.2..0.35);
            let amp2 = rng.random_range(0.05..0.15);
            let mut multipliers: Vec<f64> = (0..STEPS_PER_DAY)
                .map(|t| {
                    let x = t as f64 / STEPS_PER_DAY as f64 * std::f64::consts::TAU;
                    let m = 1.0
                        + amp1 * (x + phase).sin()
                        + amp2 * (2.0 * x + phase2).sin()
                        + rng.random_range(-0.03..0.03);
                    m.max(0.05)
                })
                .collect();
            let mean = multipliers.iter().sum::<f64>() / STEPS_PER_DAY as f64;
            for m in &mut multipliers {
                *m /= mean;
            }
            DemandPattern::new(id, multipliers).expect("generated pattern is valid")
        })
        .collect()
}

/// A leak injected at a node, active from `start_step` to the end of the day.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakEvent {
    pub node: NodeId,
    /// Emitter coefficient, L/s per sqrt(m) of pressure head.
    pub emitter_coeff: f64,
    pub start_step: usize,
}

/// A set of leak events plus the seed driving every random draw tied to this
/// scenario (sensor noise, report simulation).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub leaks: Vec<LeakEvent>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(leaks: Vec<LeakEvent>, seed_value: u64) -> Result<Self> {
        let mut nodes = std::collections::BTreeSet::new();
        for leak in &leaks {
            if !(leak.emitter_coeff > 0.0) {
                return Err(Error::Validation(format!(
                    "leak at node {}: emitter coefficient must be > 0, got {}",
                    leak.node, leak.emitter_coeff
                )));
            }
            if leak.start_step >= STEPS_PER_DAY {
                return Err(Error::Validation(format!(
                    "leak at node {}: start_step {} outside [0, {})",
                    leak.node, leak.start_step, STEPS_PER_DAY
                )));
            }
            if !nodes.insert(leak.node) {
                return Err(Error::Validation(format!(
                    "leak nodes must be distinct, node {} repeats",
                    leak.node
                )));
            }
        }
        Ok(Scenario {
            leaks,
            seed: seed_value,
        })
    }

    pub fn no_leak(seed_value: u64) -> Self {
        Scenario {
            leaks: Vec::new(),
            seed: seed_value,
        }
    }

    /// Nodes whose leak is active at `step`.
    pub fn active_leaks(&self, step: usize) -> Vec<(NodeId, f64)> {
        self.leaks
            .iter()
            .filter(|l| l.start_step <= step)
            .map(|l| (l.node, l.emitter_coeff))
            .collect()
    }

    /// Nodes leaking at any point in the day.
    pub fn leak_nodes(&self) -> Vec<NodeId> {
        self.leaks.iter().map(|l| l.node).collect()
    }
}

/// Random-scenario knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub max_leaks: usize,
    /// Emitter coefficient range (low, high), L/s per sqrt(m).
    pub emitter_range: (f64, f64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            max_leaks: 3,
            emitter_range: (0.2, 1.0),
        }
    }
}

/// Draw a scenario: leak count uniform on [0, max_leaks], locations uniform
/// without replacement over junctions, sizes uniform over the emitter range,
/// start steps uniform over the day. Deterministic per seed.
pub fn generate_scenario(
    net: &WaterNetwork,
    config: &ScenarioConfig,
    seed_value: u64,
) -> Result<Scenario> {
    let (lo, hi) = config.emitter_range;
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidConfig(format!(
            "emitter range ({lo}, {hi}) must satisfy 0 < low <= high"
        )));
    }
    let junctions = net.junctions();
    if config.max_leaks > junctions.len() {
        return Err(Error::InvalidConfig(format!(
            "max_leaks {} exceeds the {} junctions",
            config.max_leaks,
            junctions.len()
        )));
    }
    let mut rng = seed::rng(seed_value);
    let count = rng.random_range(0..=config.max_leaks);
    let mut pool = junctions;
    pool.shuffle(&mut rng);
    let mut leaks: Vec<LeakEvent> = pool[..count]
        .iter()
        .map(|&node| LeakEvent {
            node,
            emitter_coeff: if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            },
            start_step: rng.random_range(0..STEPS_PER_DAY),
        })
        .collect();
    leaks.sort_by_key(|l| l.node);
    Scenario::new(leaks, seed_value)
}

/// A simulated day: solved states, per-step ground-truth labels, and the
/// recorded (optionally noisy) sensor observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub scenario: Scenario,
    pub states: Vec<HydraulicState>,
    pub labels: Vec<LabelAssignment>,
    pub observations: Vec<ObservationVector>,
    pub noise_sigma: f64,
}

/// Simulate the full day. Step t uses demand = base_demand × multiplier[t];
/// a leak is active from its start step onward; labels mirror that. Gaussian
/// sensor noise (std `noise_sigma`, seeded from the scenario) perturbs only
/// the recorded observations, never the solved states.
pub fn simulate(
    net: &WaterNetwork,
    scenario: &Scenario,
    patterns: &[DemandPattern],
    layout: &SensorLayout,
    noise_sigma: f64,
) -> Result<SimulationResult> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let by_id: std::collections::BTreeMap<usize, &DemandPattern> =
        patterns.iter().map(|p| (p.id, p)).collect();
    let node_patterns: Vec<&DemandPattern> = net
        .nodes()
        .iter()
        .map(|n| {
            by_id.get(&n.demand_pattern_id).copied().ok_or_else(|| {
                Error::Validation(format!(
                    "node {} references demand pattern {} but it was not provided",
                    n.id, n.demand_pattern_id
                ))
            })
        })
        .collect::<Result<_>>()?;
    for leak in &scenario.leaks {
        if leak.node >= net.node_count() {
            return Err(Error::InvalidNode(leak.node));
        }
    }

    let mut noise = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidConfig(format!("sensor noise: {e}")))?;
        Some((seed::rng(seed::derive(scenario.seed, stream::SENSOR_NOISE, 0)), normal))
    } else {
        None
    };

    let mut states = Vec::with_capacity(STEPS_PER_DAY);
    let mut labels = Vec::with_capacity(STEPS_PER_DAY);
    let mut observations = Vec::with_capacity(STEPS_PER_DAY);
    let mut previous: Option<HydraulicState> = None;

    for step in 0..STEPS_PER_DAY {
        let demands: Vec<f64> = net
            .nodes()
            .iter()
            .map(|n| n.base_demand * node_patterns[n.id].multipliers[step])
            .collect();
        let active = scenario.active_leaks(step);
        let state = solve_steady_state_warm(net, &demands, &active, previous.as_ref())
            .map_err(|e| Error::SimulationStep {
                step,
                source: Box::new(e),
            })?;

        let mut label = vec![0u8; net.node_count()];
        for &(v, _) in &active {
            label[v] = 1;
        }
        labels.push(LabelAssignment::new(label)?);

        let mut obs = observation_from_state(&state, net, layout, step);
        if let Some((rng, normal)) = noise.as_mut() {
            for value in &mut obs.values {
                *value += normal.sample(rng);
            }
        }
        observations.push(obs);
        states.push(state.clone());
        previous = Some(state);
    }

    Ok(SimulationResult {
        scenario: scenario.clone(),
        states,
        labels,
        observations,
        noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_benchmark_network;

    #[test]
    fn patterns_have_unit_mean_and_96_steps() {
        let patterns = generate_patterns(3, 4);
        assert_eq!(patterns.len(), 3);
        for p in &patterns {
            assert_eq!(p.multipliers.len(), STEPS_PER_DAY);
            let mean = p.multipliers.iter().sum::<f64>() / STEPS_PER_DAY as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_with_zero_max_leaks_is_empty() {
        let net = generate_benchmark_network(12, 0).unwrap();
        let cfg = ScenarioConfig {
            max_leaks: 0,
            ..Default::default()
        };
        let s = generate_scenario(&net, &cfg, 1).unwrap();
        assert!(s.leaks.is_empty());
    }

    #[test]
    fn scenario_generation_is_deterministic() {
        let net = generate_benchmark_network(20, 2).unwrap();
        let cfg = ScenarioConfig::default();
        assert_eq!(
            generate_scenario(&net, &cfg, 9).unwrap(),
            generate_scenario(&net, &cfg, 9).unwrap()
        );
    }

    #[test]
    fn too_many_leaks_requested_is_an_error() {
        let net = generate_benchmark_network(4, 0).unwrap();
        let cfg = ScenarioConfig {
            max_leaks: 10,
            ..Default::default()
        };
        assert!(generate_scenario(&net, &cfg, 0).is_err());
    }

    #[test]
    fn leak_count_is_roughly_uniform() {
        let net = generate_benchmark_network(24, 3).unwrap();
        let cfg = ScenarioConfig::default(); // max_leaks = 3
        let trials = 10_000;
        let mut counts = [0usize; 4];
        for i in 0..trials {
            let s = generate_scenario(&net, &cfg, 1_000 + i as u64).unwrap();
            counts[s.leaks.len()] += 1;
        }
        // each bucket is Binomial(trials, 1/4): mean 2500, sigma ~ 43.3
        let mean = trials as f64 / 4.0;
        let sigma = (trials as f64 * 0.25 * 0.75).sqrt();
        for (k, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "leak count {k} frequency {c} outside 3 sigma of uniform"
            );
        }
    }

    #[test]
    fn labels_flip_at_start_step() {
        let net = generate_benchmark_network(10, 5).unwrap();
        let node = net.junctions()[2];
        let scenario = Scenario::new(
            vec![LeakEvent {
                node,
                emitter_coeff: 0.5,
                start_step: 40,
            }],
            77,
        )
        .unwrap();
        let patterns = generate_patterns(3, 6);
        let layout = SensorLayout::full(&net);
        let result = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        assert_eq!(result.states.len(), STEPS_PER_DAY);
        for step in 0..STEPS_PER_DAY {
            let expected = u8::from(step >= 40);
            assert_eq!(result.labels[step].labels()[node], expected, "step {step}");
        }
    }

    #[test]
    fn no_leak_run_has_all_zero_labels_and_is_deterministic() {
        let net = generate_benchmark_network(10, 5).unwrap();
        let patterns = generate_patterns(3, 6);
        let layout = SensorLayout::full(&net);
        let scenario = Scenario::no_leak(3);
        let a = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        let b = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        assert_eq!(a, b);
        for step_labels in &a.labels {
            assert!(step_labels.labels().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn leak_drops_pressure_at_nearest_sensor_after_start() {
        let net = generate_benchmark_network(24, 8).unwrap();
        let patterns = generate_patterns(3, 6);
        let layout = SensorLayout::full(&net);
        let node = net.junctions()[5];
        let start = 30;
        let scenario = Scenario::new(
            vec![LeakEvent {
                node,
                emitter_coeff: 1.0,
                start_step: start,
            }],
            11,
        )
        .unwrap();
        let leaky = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        let quiet = simulate(&net, &Scenario::no_leak(11), &patterns, &layout, 0.0).unwrap();
        let col = layout.pressure_column(node).unwrap();
        let before = leaky.observations[start - 1].values[col]
            - quiet.observations[start - 1].values[col];
        let after =
            leaky.observations[start].values[col] - quiet.observations[start].values[col];
        assert!(before.abs() < 1e-9, "pre-start residual {before}");
        assert!(after < -1e-6, "post-start residual {after} should be negative");
    }

    #[test]
    fn sensor_noise_perturbs_observations_but_not_states() {
        let net = generate_benchmark_network(10, 5).unwrap();
        let patterns = generate_patterns(3, 6);
        let layout = SensorLayout::full(&net);
        let scenario = Scenario::no_leak(3);
        let clean = simulate(&net, &scenario, &patterns, &layout, 0.0).unwrap();
        let noisy = simulate(&net, &scenario, &patterns, &layout, 0.5).unwrap();
        assert_eq!(clean.states, noisy.states);
        assert_ne!(clean.observations, noisy.observations);
        let repeat = simulate(&net, &scenario, &patterns, &layout, 0.5).unwrap();
        assert_eq!(noisy, repeat);
    }
}
