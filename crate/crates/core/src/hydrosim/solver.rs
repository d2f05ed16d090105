//! Steady-state network hydraulics.
//!
//! Unknowns are the hydraulic heads at junction (non-source) nodes. Each
//! Newton iteration linearizes pipe head loss around the current flow
//! estimate, solves the resulting nodal balance system, and recovers flows
//! exactly from the new heads, so the returned state is head-loss consistent
//! by construction and the convergence test is the true nodal mass imbalance.
//!
//! Head loss follows Hazen-Williams (flow exponent 1.852). Below the flow
//! where the loss would drop under `LOW_FLOW_LOSS_EPS` meters the law is
//! linearized: without this, recovering near-zero flows from heads amplifies
//! float noise on dead-end branches past the mass tolerance. The deviation
//! from the pure power law is at most `LOW_FLOW_LOSS_EPS` per pipe.
//!
//! A leak is a pressure-dependent orifice: outflow k·sqrt(max(head −
//! elevation, 0)) in L/s. The residual always uses this exact law; only its
//! Jacobian entry is floored near zero pressure.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{NodeId, PipeStatus, WaterNetwork};

/// Hazen-Williams flow exponent.
pub const HW_EXPONENT: f64 = 1.852;
/// SI Hazen-Williams coefficient (heads in m, flow in m³/s, diameter in m).
pub const HW_COEFF_SI: f64 = 10.667;
/// Convergence target for the max nodal mass imbalance, L/s.
pub const MASS_TOLERANCE_LPS: f64 = 5e-7;
const MAX_ITERATIONS: usize = 200;
/// Head-loss magnitude (m) under which the pipe law is linearized.
const LOW_FLOW_LOSS_EPS: f64 = 1e-7;
/// Pressure head (m) under which the emitter Jacobian entry is floored.
const EMITTER_PRESSURE_EPS: f64 = 1e-6;

/// Solved heads (m, per node) and signed flows (L/s, per pipe; positive in
/// the stored endpoint order). Closed pipes carry zero flow.
#[derive(Debug, Clone, PartialEq)]
pub struct HydraulicState {
    pub heads: Vec<f64>,
    pub flows: Vec<f64>,
}

/// Pipe resistance r such that head loss = r·q^1.852 with q in L/s.
pub fn pipe_resistance(length: f64, diameter: f64, roughness: f64) -> f64 {
    HW_COEFF_SI * length / (roughness.powf(HW_EXPONENT) * diameter.powf(4.871))
        * 1e-3f64.powf(HW_EXPONENT)
}

/// Pure Hazen-Williams head loss (m), signed with the flow (L/s).
pub fn hazen_williams_loss(length: f64, diameter: f64, roughness: f64, flow_lps: f64) -> f64 {
    let r = pipe_resistance(length, diameter, roughness);
    flow_lps.signum() * r * flow_lps.abs().powf(HW_EXPONENT)
}

/// Leak outflow (L/s) of an emitter with coefficient k at a pressure head (m).
pub fn emitter_flow(coeff: f64, pressure_head: f64) -> f64 {
    coeff * pressure_head.max(0.0).sqrt()
}

/// Per-pipe precomputation for the piecewise head-loss law.
#[derive(Debug, Clone, Copy)]
struct PipeLaw {
    resistance: f64,
    /// Flow below which the law is linear: loss(q_lin) = LOW_FLOW_LOSS_EPS.
    q_lin: f64,
    /// Slope of the linear regime = resistance · q_lin^0.852.
    lin_slope: f64,
}

impl PipeLaw {
    fn new(resistance: f64) -> Self {
        let q_lin = (LOW_FLOW_LOSS_EPS / resistance).powf(1.0 / HW_EXPONENT);
        PipeLaw {
            resistance,
            q_lin,
            lin_slope: LOW_FLOW_LOSS_EPS / q_lin,
        }
    }

    /// Signed head loss for a signed flow.
    fn loss(&self, q: f64) -> f64 {
        if q.abs() >= self.q_lin {
            q.signum() * self.resistance * q.abs().powf(HW_EXPONENT)
        } else {
            self.lin_slope * q
        }
    }

    /// d(loss)/d(flow), always positive.
    fn gradient(&self, q: f64) -> f64 {
        if q.abs() >= self.q_lin {
            HW_EXPONENT * self.resistance * q.abs().powf(HW_EXPONENT - 1.0)
        } else {
            self.lin_slope
        }
    }

    /// Signed flow producing the given signed head difference.
    fn inverse(&self, dh: f64) -> f64 {
        if dh.abs() >= LOW_FLOW_LOSS_EPS {
            dh.signum() * (dh.abs() / self.resistance).powf(1.0 / HW_EXPONENT)
        } else {
            dh / self.lin_slope
        }
    }
}

/// Residual diagnostics for a solved state; see [`verify_state`].
#[derive(Debug, Clone, Copy)]
pub struct StateCheck {
    /// Max over junctions of |inflow − outflow − demand − leak| in L/s.
    pub max_mass_imbalance: f64,
    /// Max over open pipes of |head difference − Hazen-Williams loss| in m.
    pub max_headloss_error: f64,
}

/// Solve the steady state from a cold start.
pub fn solve_steady_state(
    net: &WaterNetwork,
    demands: &[f64],
    active_leaks: &[(NodeId, f64)],
) -> Result<HydraulicState> {
    solve_steady_state_warm(net, demands, active_leaks, None)
}

/// Solve the steady state, optionally starting from a previous solution of a
/// nearby problem (adjacent time step).
pub fn solve_steady_state_warm(
    net: &WaterNetwork,
    demands: &[f64],
    active_leaks: &[(NodeId, f64)],
    warm: Option<&HydraulicState>,
) -> Result<HydraulicState> {
    let n = net.node_count();
    let m = net.pipe_count();
    if demands.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "demands has length {}, network has {} nodes",
            demands.len(),
            n
        )));
    }
    for (v, &d) in demands.iter().enumerate() {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::Validation(format!(
                "node {v}: demand must be finite and >= 0, got {d}"
            )));
        }
    }
    let mut leak_coeff = vec![0.0f64; n];
    for &(v, k) in active_leaks {
        if v >= n {
            return Err(Error::InvalidNode(v));
        }
        if !(k > 0.0) {
            return Err(Error::Validation(format!(
                "leak at node {v}: emitter coefficient must be > 0, got {k}"
            )));
        }
        leak_coeff[v] += k;
    }
    net.check_source_reachability()?;

    let laws: Vec<Option<PipeLaw>> = net
        .pipes()
        .iter()
        .map(|p| match p.status {
            PipeStatus::Open => Some(PipeLaw::new(pipe_resistance(
                p.length, p.diameter, p.roughness,
            ))),
            PipeStatus::Closed => None,
        })
        .collect();

    // Junction (unknown) indexing; sources hold fixed heads.
    let mut junction_row = vec![usize::MAX; n];
    let junctions = net.junctions();
    for (row, &v) in junctions.iter().enumerate() {
        junction_row[v] = row;
    }
    let n_junc = junctions.len();

    let mut heads = match warm {
        Some(state) => state.heads.clone(),
        None => initial_heads(net),
    };
    for s in net.sources() {
        heads[s.node] = s.head;
    }

    let recover = |heads: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|p| match laws[p] {
                Some(law) => {
                    let (u, v) = net.pipes()[p].endpoints;
                    law.inverse(heads[u] - heads[v])
                }
                None => 0.0,
            })
            .collect()
    };
    let residual_of = |heads: &[f64], flows: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for &v in &junctions {
            let r = node_imbalance(net, demands, &leak_coeff, heads, flows, v);
            worst = worst.max(r.abs());
        }
        worst
    };

    let mut flows = recover(&heads);
    let mut residual = residual_of(&heads, &flows);
    if residual < MASS_TOLERANCE_LPS {
        return Ok(HydraulicState { heads, flows });
    }

    // Flow estimates for the first Jacobian: warm flows if available, else a
    // spanning-tree distribution of the demands.
    let mut grad_flows = match warm {
        Some(state) => state.flows.clone(),
        None => spanning_tree_flows(net, demands, &laws),
    };

    let mut matrix = DMatrix::<f64>::zeros(n_junc, n_junc);
    let mut rhs = DVector::<f64>::zeros(n_junc);

    for iteration in 0..MAX_ITERATIONS {
        matrix.fill(0.0);
        rhs.fill(0.0);

        for p in 0..m {
            let Some(law) = laws[p] else { continue };
            let (u, v) = net.pipes()[p].endpoints;
            let g = law.gradient(grad_flows[p]);
            let c = 1.0 / g;
            let b = grad_flows[p] - law.loss(grad_flows[p]) / g;
            // Linearized flow u→v: c·(H_u − H_v) + b. Inflow bookkeeping at
            // each junction endpoint.
            for (node, other, sign_b) in [(u, v, -1.0), (v, u, 1.0)] {
                let row = junction_row[node];
                if row == usize::MAX {
                    continue;
                }
                matrix[(row, row)] += c;
                rhs[row] += sign_b * b;
                match junction_row[other] {
                    usize::MAX => rhs[row] += c * heads[other],
                    col => matrix[(row, col)] -= c,
                }
            }
        }
        for (row, &v) in junctions.iter().enumerate() {
            let pressure = heads[v] - net.nodes()[v].elevation;
            let leak = emitter_flow(leak_coeff[v], pressure);
            let slope = if leak_coeff[v] > 0.0 {
                leak_coeff[v] / (2.0 * pressure.max(EMITTER_PRESSURE_EPS).sqrt())
            } else {
                0.0
            };
            matrix[(row, row)] += slope;
            rhs[row] -= demands[v] + leak - slope * heads[v];
        }

        let solved = matrix.clone().lu().solve(&rhs).ok_or(Error::NonConvergence {
            residual,
            iterations: iteration,
        })?;
        let mut candidate = heads.clone();
        for (row, &v) in junctions.iter().enumerate() {
            candidate[v] = solved[row];
        }

        let mut best_heads = candidate.clone();
        let mut best_flows = recover(&candidate);
        let mut best_residual = residual_of(&best_heads, &best_flows);
        // Damp toward the previous iterate while the full step regresses.
        let mut alpha = 1.0;
        let mut tries = 0;
        while best_residual > residual && tries < 30 {
            alpha *= 0.5;
            let damped: Vec<f64> = heads
                .iter()
                .zip(&candidate)
                .map(|(&old, &new)| old + alpha * (new - old))
                .collect();
            let damped_flows = recover(&damped);
            let damped_residual = residual_of(&damped, &damped_flows);
            if damped_residual < best_residual {
                best_heads = damped;
                best_flows = damped_flows;
                best_residual = damped_residual;
            }
            tries += 1;
        }

        heads = best_heads;
        flows = best_flows;
        residual = best_residual;
        if !residual.is_finite() {
            return Err(Error::NonConvergence {
                residual,
                iterations: iteration + 1,
            });
        }
        if residual < MASS_TOLERANCE_LPS {
            return Ok(HydraulicState { heads, flows });
        }
        grad_flows = flows.clone();
    }

    Err(Error::NonConvergence {
        residual,
        iterations: MAX_ITERATIONS,
    })
}

/// Net inflow minus demand minus leak outflow at a node, in L/s.
fn node_imbalance(
    net: &WaterNetwork,
    demands: &[f64],
    leak_coeff: &[f64],
    heads: &[f64],
    flows: &[f64],
    v: NodeId,
) -> f64 {
    let mut inflow = 0.0;
    for &(p, _) in net.incident(v).expect("valid node") {
        let pipe = &net.pipes()[p];
        if pipe.status != PipeStatus::Open {
            continue;
        }
        if pipe.endpoints.1 == v {
            inflow += flows[p];
        } else {
            inflow -= flows[p];
        }
    }
    let leak = emitter_flow(leak_coeff[v], heads[v] - net.nodes()[v].elevation);
    inflow - demands[v] - leak
}

/// Cold-start heads: every node takes the head of the source that reaches it
/// first over open pipes. A flat no-demand network is then already converged.
fn initial_heads(net: &WaterNetwork) -> Vec<f64> {
    let mut heads = vec![f64::NAN; net.node_count()];
    let mut queue = std::collections::VecDeque::new();
    for s in net.sources() {
        heads[s.node] = s.head;
        queue.push_back(s.node);
    }
    while let Some(u) = queue.pop_front() {
        for &(p, w) in net.incident(u).expect("valid node") {
            if net.pipes()[p].status == PipeStatus::Open && heads[w].is_nan() {
                heads[w] = heads[u];
                queue.push_back(w);
            }
        }
    }
    heads
}

/// Route each junction's demand up a BFS tree to its source; tree pipes carry
/// the accumulated subtree demand, other pipes start at zero.
fn spanning_tree_flows(net: &WaterNetwork, demands: &[f64], laws: &[Option<PipeLaw>]) -> Vec<f64> {
    let n = net.node_count();
    let mut parent_pipe = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    for s in net.sources() {
        seen[s.node] = true;
        queue.push_back(s.node);
    }
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(p, w) in net.incident(u).expect("valid node") {
            if laws[p].is_some() && !seen[w] {
                seen[w] = true;
                parent_pipe[w] = p;
                queue.push_back(w);
            }
        }
    }
    let mut carry: Vec<f64> = demands.to_vec();
    let mut flows = vec![0.0f64; net.pipe_count()];
    for &v in order.iter().rev() {
        let p = parent_pipe[v];
        if p == usize::MAX {
            continue; // source
        }
        let pipe = &net.pipes()[p];
        let (a, b) = pipe.endpoints;
        let (up, _down) = if b == v { (a, v) } else { (b, v) };
        // positive flow runs endpoint.0 → endpoint.1
        if pipe.endpoints.0 == up {
            flows[p] += carry[v];
        } else {
            flows[p] -= carry[v];
        }
        carry[up] += carry[v];
    }
    flows
}

/// Recompute the residuals the solver promises: nodal mass balance with the
/// exact emitter law, and head-difference vs pure Hazen-Williams loss.
pub fn verify_state(
    net: &WaterNetwork,
    demands: &[f64],
    active_leaks: &[(NodeId, f64)],
    state: &HydraulicState,
) -> StateCheck {
    let mut leak_coeff = vec![0.0f64; net.node_count()];
    for &(v, k) in active_leaks {
        leak_coeff[v] += k;
    }
    let mut max_mass = 0.0f64;
    for v in net.junctions() {
        let r = node_imbalance(net, demands, &leak_coeff, &state.heads, &state.flows, v);
        max_mass = max_mass.max(r.abs());
    }
    let mut max_loss = 0.0f64;
    for pipe in net.pipes() {
        if pipe.status != PipeStatus::Open {
            continue;
        }
        let (u, v) = pipe.endpoints;
        let dh = state.heads[u] - state.heads[v];
        let loss = hazen_williams_loss(pipe.length, pipe.diameter, pipe.roughness, state.flows[pipe.id]);
        max_loss = max_loss.max((dh - loss).abs());
    }
    StateCheck {
        max_mass_imbalance: max_mass,
        max_headloss_error: max_loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NodeRecord, PipeRecord, SourceRecord};

    fn single_pipe(demand: f64) -> (WaterNetwork, Vec<f64>) {
        let nodes = vec![
            NodeRecord {
                id: 0,
                coord: [0.0, 0.0],
                elevation: 5.0,
                base_demand: 0.0,
                demand_pattern_id: 0,
            },
            NodeRecord {
                id: 1,
                coord: [200.0, 0.0],
                elevation: 5.0,
                base_demand: demand,
                demand_pattern_id: 0,
            },
        ];
        let pipes = vec![PipeRecord {
            id: 0,
            endpoints: (0, 1),
            length: 200.0,
            diameter: 0.2,
            roughness: 120.0,
            status: PipeStatus::Open,
        }];
        let sources = vec![SourceRecord { node: 0, head: 50.0 }];
        let net = WaterNetwork::new(nodes, pipes, sources).unwrap();
        let demands = vec![0.0, demand];
        (net, demands)
    }

    #[test]
    fn single_pipe_matches_closed_form() {
        let (net, demands) = single_pipe(10.0);
        let state = solve_steady_state(&net, &demands, &[]).unwrap();
        // independent closed form: flow equals the demand, head drops by the
        // Hazen-Williams loss of that flow
        let r = HW_COEFF_SI * 200.0 / (120.0f64.powf(1.852) * 0.2f64.powf(4.871));
        let expected_loss = r * (10.0f64 / 1000.0).powf(1.852);
        assert!((state.flows[0] - 10.0).abs() < 1e-6, "flow {}", state.flows[0]);
        assert!(
            (state.heads[1] - (50.0 - expected_loss)).abs() < 1e-4,
            "head {} vs {}",
            state.heads[1],
            50.0 - expected_loss
        );
        let check = verify_state(&net, &demands, &[], &state);
        assert!(check.max_mass_imbalance < 1e-6);
        assert!(check.max_headloss_error < 1e-6);
    }

    #[test]
    fn zero_demand_gives_exact_no_flow_equilibrium() {
        let (net, _) = single_pipe(0.0);
        let state = solve_steady_state(&net, &[0.0, 0.0], &[]).unwrap();
        assert_eq!(state.flows, vec![0.0]);
        assert_eq!(state.heads, vec![50.0, 50.0]);
    }

    #[test]
    fn leak_lowers_head_and_raises_inflow() {
        let (net, demands) = single_pipe(5.0);
        let base = solve_steady_state(&net, &demands, &[]).unwrap();
        let leaked = solve_steady_state(&net, &demands, &[(1, 0.5)]).unwrap();
        assert!(leaked.heads[1] < base.heads[1]);
        assert!(leaked.flows[0] > base.flows[0]);
        let check = verify_state(&net, &demands, &[(1, 0.5)], &leaked);
        assert!(check.max_mass_imbalance < 1e-6, "{check:?}");
        assert!(check.max_headloss_error < 1e-6, "{check:?}");
    }

    #[test]
    fn demands_must_be_nonnegative() {
        let (net, _) = single_pipe(1.0);
        assert!(solve_steady_state(&net, &[0.0, -1.0], &[]).is_err());
    }

    #[test]
    fn unreachable_node_is_reported() {
        let (net, demands) = single_pipe(1.0);
        let mut pipes = net.pipes().to_vec();
        pipes[0].status = PipeStatus::Closed;
        let cut = WaterNetwork::new(net.nodes().to_vec(), pipes, net.sources().to_vec()).unwrap();
        assert!(matches!(
            solve_steady_state(&cut, &demands, &[]),
            Err(Error::Unreachable(1))
        ));
    }

    #[test]
    fn benchmark_network_converges_and_verifies() {
        let net = crate::network::generate_benchmark_network(40, 3).unwrap();
        let demands: Vec<f64> = net.nodes().iter().map(|n| n.base_demand).collect();
        let state = solve_steady_state(&net, &demands, &[(5, 0.8)]).unwrap();
        let check = verify_state(&net, &demands, &[(5, 0.8)], &state);
        assert!(check.max_mass_imbalance < 1e-6, "{check:?}");
        assert!(check.max_headloss_error < 1e-6, "{check:?}");
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let net = crate::network::generate_benchmark_network(30, 7).unwrap();
        let demands: Vec<f64> = net.nodes().iter().map(|n| n.base_demand).collect();
        let cold = solve_steady_state(&net, &demands, &[]).unwrap();
        let warm = solve_steady_state_warm(&net, &demands, &[], Some(&cold)).unwrap();
        let check = verify_state(&net, &demands, &[], &warm);
        assert!(check.max_mass_imbalance < 1e-6);
        for (a, b) in cold.heads.iter().zip(&warm.heads) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn raising_emitter_never_raises_head() {
        let net = crate::network::generate_benchmark_network(25, 11).unwrap();
        let demands: Vec<f64> = net.nodes().iter().map(|n| n.base_demand).collect();
        let node = net.junctions()[4];
        let mut prev_head = f64::INFINITY;
        for k in [0.1, 0.3, 0.6, 1.0, 1.5] {
            let state = solve_steady_state(&net, &demands, &[(node, k)]).unwrap();
            assert!(state.heads[node] <= prev_head + 1e-9);
            prev_head = state.heads[node];
        }
    }
}
