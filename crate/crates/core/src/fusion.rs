//! Folding simulated human leak reports into the predicted leak set.
//!
//! A report is a noisy geolocated sighting. The nodes within radius γ of a
//! report form its clique; a clique that contains no predicted-leaking node
//! carries an infinite consistency cost. The greedy pass walks the cliques
//! and, for each still-inconsistent one, inserts the member whose label the
//! model is most uncertain about (highest marginal entropy), provided that
//! entropy clears the gate Γ. The set only ever grows, and each insertion
//! settles at least the clique that triggered it.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::crf::{LabelAssignment, MarginalEstimate};
use crate::error::{Error, Result};
use crate::hydrosim::{Scenario, STEPS_PER_DAY};
use crate::network::{NodeId, WaterNetwork};
use crate::seed::{self, stream};
use crate::textio;

/// A geolocated leak sighting at a time step.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanReport {
    /// Planar position in meters, same frame as node coordinates.
    pub location: [f64; 2],
    pub step: usize,
}

/// Nodes within γ of one report's location.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportClique {
    pub location: [f64; 2],
    pub step: usize,
    /// Nonempty; reports resolving to no node are dropped at build time.
    pub members: BTreeSet<NodeId>,
}

/// The cliques that survived resolution, plus how many reports were dropped
/// for matching no node.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueSet {
    pub cliques: Vec<ReportClique>,
    pub dropped_reports: usize,
}

/// Report-simulation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSimConfig {
    /// Probability that a true leak produces a report.
    pub p_report: f64,
    /// Isotropic Gaussian noise on the report location, meters.
    pub location_noise_sigma: f64,
    /// Clique radius γ, meters.
    pub gamma: f64,
    /// Expected spurious reports per day (Poisson), uniform over the
    /// network bounding box.
    pub false_report_rate: f64,
}

impl ReportSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_report) {
            return Err(Error::InvalidConfig(format!(
                "p_report must be in [0, 1], got {}",
                self.p_report
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.location_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "location_noise_sigma must be >= 0, got {}",
                self.location_noise_sigma
            )));
        }
        if !(self.false_report_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "false_report_rate must be >= 0, got {}",
                self.false_report_rate
            )));
        }
        Ok(())
    }
}

impl Default for ReportSimConfig {
    fn default() -> Self {
        ReportSimConfig {
            p_report: 0.7,
            location_noise_sigma: 1.0,
            gamma: 2.0,
            false_report_rate: 0.0,
        }
    }
}

/// Entropy gate Γ for the greedy pass (nats).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub entropy_gate: f64,
}

impl FusionConfig {
    pub fn new(entropy_gate: f64) -> Result<Self> {
        if !(entropy_gate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "entropy gate must be >= 0, got {entropy_gate}"
            )));
        }
        Ok(FusionConfig { entropy_gate })
    }
}

/// The set of nodes predicted to be leaking.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LeakSet {
    pub members: BTreeSet<NodeId>,
}

impl LeakSet {
    pub fn from_nodes(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        LeakSet {
            members: nodes.into_iter().collect(),
        }
    }

    /// Nodes labeled 1 in a labeling.
    pub fn from_labels(labels: &LabelAssignment) -> Self {
        LeakSet {
            members: labels.positive_nodes().into_iter().collect(),
        }
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.members.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Draw the day's reports for a scenario: each true leak reports with
/// probability `p_report` at its node's coordinates plus Gaussian noise,
/// timestamped uniformly at or after the leak's start; spurious reports are
/// Poisson over the bounding box. Deterministic per seed, and coupled across
/// `p_report` values: a leak that reports at p also reports at any p' > p
/// with everything else identical.
pub fn simulate_reports(
    scenario: &Scenario,
    net: &WaterNetwork,
    config: &ReportSimConfig,
    seed_value: u64,
) -> Result<Vec<HumanReport>> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(seed_value, stream::REPORTS, 0));
    let noise = if config.location_noise_sigma > 0.0 {
        Some(
            Normal::new(0.0, config.location_noise_sigma)
                .map_err(|e| Error::InvalidConfig(format!("location noise: {e}")))?,
        )
    } else {
        None
    };

    let mut reports = Vec::new();
    for leak in &scenario.leaks {
        if leak.node >= net.node_count() {
            return Err(Error::InvalidNode(leak.node));
        }
        // draw everything regardless of the coin so streams stay aligned
        // across different p_report values
        let coin: f64 = rng.random_range(0.0..1.0);
        let coord = net.nodes()[leak.node].coord;
        let (dx, dy) = match &noise {
            Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
            None => (0.0, 0.0),
        };
        let step = rng.random_range(leak.start_step..STEPS_PER_DAY);
        if coin < config.p_report {
            reports.push(HumanReport {
                location: [coord[0] + dx, coord[1] + dy],
                step,
            });
        }
    }

    if config.false_report_rate > 0.0 {
        let poisson = Poisson::new(config.false_report_rate)
            .map_err(|e| Error::InvalidConfig(format!("false report rate: {e}")))?;
        let count = poisson.sample(&mut rng) as usize;
        let (lo, hi) = net.bounding_box();
        for _ in 0..count {
            reports.push(HumanReport {
                location: [
                    rng.random_range(lo[0]..=hi[0]),
                    rng.random_range(lo[1]..=hi[1]),
                ],
                step: rng.random_range(0..STEPS_PER_DAY),
            });
        }
    }
    Ok(reports)
}

/// One clique per report: the nodes strictly within γ of its location.
/// Reports matching no node are dropped and counted.
pub fn build_cliques(reports: &[HumanReport], net: &WaterNetwork, gamma: f64) -> Result<CliqueSet> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be > 0, got {gamma}"
        )));
    }
    let mut cliques = Vec::new();
    let mut dropped = 0usize;
    for report in reports {
        let members: BTreeSet<NodeId> = (0..net.node_count())
            .filter(|&v| net.distance_to_node(report.location, v) < gamma)
            .collect();
        if members.is_empty() {
            dropped += 1;
        } else {
            cliques.push(ReportClique {
                location: report.location,
                step: report.step,
                members,
            });
        }
    }
    Ok(CliqueSet {
        cliques,
        dropped_reports: dropped,
    })
}

/// The clique consistency cost: 0 when some member is in the leak set,
/// +∞ otherwise.
pub fn high_order_potential(clique: &ReportClique, leaks: &LeakSet) -> f64 {
    if clique.members.iter().any(|&v| leaks.contains(v)) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Binary entropy of p(label = 1) in nats, with 0·ln 0 = 0. Ranges over
/// [0, ln 2], peaks at p = 0.5.
pub fn entropy(p1: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p1), "p1 = {p1}");
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(p1) + term(1.0 - p1)
}

/// Audit record of one clique's treatment by the greedy pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionAudit {
    pub clique_index: usize,
    pub step: usize,
    /// Already consistent when visited, so skipped.
    pub already_satisfied: bool,
    /// The argmax-entropy member and its entropy (ties to the smallest id).
    pub candidate: Option<(NodeId, f64)>,
    pub inserted: bool,
}

/// Result of the greedy pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub leaks: LeakSet,
    /// Cliques still inconsistent with the final set (their members' entropy
    /// never cleared the gate).
    pub unresolved_cliques: usize,
    pub audit: Vec<FusionAudit>,
}

/// Greedy integration of report cliques into the predicted leak set.
///
/// Cliques are visited in ascending (step, smallest member) order. A clique
/// that already intersects the evolving set is skipped; otherwise its
/// highest-entropy member joins the set if that entropy exceeds the gate.
/// The input set is never shrunk and each clique inserts at most one node.
pub fn greedy_fuse(
    leaks: &LeakSet,
    cliques: &CliqueSet,
    marginals: &MarginalEstimate,
    config: &FusionConfig,
) -> Result<FusionOutcome> {
    for clique in &cliques.cliques {
        if let Some(&v) = clique.members.iter().find(|&&v| v >= marginals.p1.len()) {
            return Err(Error::MissingMarginal(v));
        }
        if clique.members.is_empty() {
            return Err(Error::Validation(
                "cliques must be nonempty; build_cliques drops empty ones".into(),
            ));
        }
    }

    let mut order: Vec<usize> = (0..cliques.cliques.len()).collect();
    order.sort_by_key(|&i| {
        let c = &cliques.cliques[i];
        (c.step, *c.members.iter().next().expect("nonempty"), i)
    });

    let mut fused = leaks.clone();
    let mut audit = Vec::with_capacity(order.len());
    for &i in &order {
        let clique = &cliques.cliques[i];
        if high_order_potential(clique, &fused) == 0.0 {
            audit.push(FusionAudit {
                clique_index: i,
                step: clique.step,
                already_satisfied: true,
                candidate: None,
                inserted: false,
            });
            continue;
        }
        // argmax of entropy over members; BTreeSet order makes ties land on
        // the smallest node id
        let (best_node, best_entropy) = clique
            .members
            .iter()
            .map(|&v| (v, entropy(marginals.p1[v])))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (v, h)| {
                if h > acc.1 {
                    (v, h)
                } else {
                    acc
                }
            });
        let inserted = best_entropy > config.entropy_gate;
        if inserted {
            fused.members.insert(best_node);
        }
        audit.push(FusionAudit {
            clique_index: i,
            step: clique.step,
            already_satisfied: false,
            candidate: Some((best_node, best_entropy)),
            inserted,
        });
    }

    let unresolved_cliques = cliques
        .cliques
        .iter()
        .filter(|c| high_order_potential(c, &fused).is_infinite())
        .count();
    Ok(FusionOutcome {
        leaks: fused,
        unresolved_cliques,
        audit,
    })
}

/// Reports as line-delimited records: `step x y` per line.
pub fn save_reports(path: impl AsRef<Path>, reports: &[HumanReport]) -> Result<()> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!("{} {} {}\n", r.step, r.location[0], r.location[1]));
    }
    textio::write_file(path, &out)
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<HumanReport>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = textio::read_file(path)?;
    let mut reports = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                &origin,
                lineno,
                format!("report record needs 3 fields (step x y), got {}", fields.len()),
            ));
        }
        reports.push(HumanReport {
            step: textio::parse_usize(&origin, lineno, "step", fields[0])?,
            location: [
                textio::parse_f64(&origin, lineno, "x", fields[1])?,
                textio::parse_f64(&origin, lineno, "y", fields[2])?,
            ],
        });
    }
    Ok(reports)
}
