//! Dataset directory layout.
//!
//! ```text
//! <dir>/
//!   dataset.toml            manifest: counts, layout, scenario knobs
//!   network.txt             the network file
//!   patterns.csv            pattern,m0..m95
//!   baseline/               the no-leak day (observations/labels/manifest)
//!   train_observations.csv  scenario,<sensor columns>   (final-step readings)
//!   train_labels.csv        scenario,n0..               (final-step truth)
//!   train_scenarios.txt     index seed node:coeff:start ...
//!   test_observations.csv / test_labels.csv / test_scenarios.txt
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::LabelAssignment;
use crate::error::{Error, Result};
use crate::features::ObservationVector;
use crate::hydrosim::{
    load_simulation, save_simulation, LeakEvent, Scenario, SimulationResult, STEPS_PER_DAY,
};
use crate::network::{load_network, save_network, SensorLayout, WaterNetwork};
use crate::textio;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One simulated scenario reduced to its final step: the recorded
/// observation and the ground-truth labels while every leak is active.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub scenario: Scenario,
    pub observation: ObservationVector,
    pub labels: LabelAssignment,
}

impl ScenarioSample {
    pub fn from_simulation(result: &SimulationResult) -> Self {
        let last = STEPS_PER_DAY - 1;
        ScenarioSample {
            scenario: result.scenario.clone(),
            observation: result.observations[last].clone(),
            labels: result.labels[last].clone(),
        }
    }
}

/// Everything the pipeline needs downstream of simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub network: WaterNetwork,
    pub patterns: Vec<crate::hydrosim::DemandPattern>,
    pub layout: SensorLayout,
    /// Full no-leak day, for residual baselines at any step.
    pub baseline: SimulationResult,
    pub train: Vec<ScenarioSample>,
    pub test: Vec<ScenarioSample>,
    pub noise_sigma: f64,
}

impl Dataset {
    /// The baseline observation for final-step samples.
    pub fn baseline_final(&self) -> &ObservationVector {
        &self.baseline.observations[STEPS_PER_DAY - 1]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    n_train: usize,
    n_test: usize,
    noise_sigma: f64,
    pressure_sensors: Vec<usize>,
    flow_sensors: Vec<usize>,
}

pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    save_network(&dataset.network, dir.join("network.txt"))?;

    let mut header = vec!["pattern".to_string()];
    header.extend((0..STEPS_PER_DAY).map(|t| format!("m{t}")));
    textio::write_csv(
        dir.join("patterns.csv"),
        &header,
        dataset.patterns.iter().map(|p| {
            let mut row = vec![p.id.to_string()];
            row.extend(p.multipliers.iter().map(|m| m.to_string()));
            row
        }),
    )?;

    save_simulation(dir.join("baseline"), &dataset.baseline, &dataset.layout)?;

    for (split, samples) in [("train", &dataset.train), ("test", &dataset.test)] {
        write_split(dir, split, samples, &dataset.layout, dataset.network.node_count())?;
    }

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        n_train: dataset.train.len(),
        n_test: dataset.test.len(),
        noise_sigma: dataset.noise_sigma,
        pressure_sensors: dataset.layout.pressure_sensors().to_vec(),
        flow_sensors: dataset.layout.flow_sensors().to_vec(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Validation(format!("dataset manifest serialization: {e}")))?;
    textio::write_file(dir.join("dataset.toml"), &text)
}

fn write_split(
    dir: &Path,
    split: &str,
    samples: &[ScenarioSample],
    layout: &SensorLayout,
    n_nodes: usize,
) -> Result<()> {
    let mut header = vec!["scenario".to_string()];
    header.extend(layout.column_names());
    textio::write_csv(
        dir.join(format!("{split}_observations.csv")),
        &header,
        samples.iter().enumerate().map(|(i, s)| {
            let mut row = vec![i.to_string()];
            row.extend(s.observation.values.iter().map(|v| v.to_string()));
            row
        }),
    )?;

    let mut header = vec!["scenario".to_string()];
    header.extend((0..n_nodes).map(|v| format!("n{v}")));
    textio::write_csv(
        dir.join(format!("{split}_labels.csv")),
        &header,
        samples.iter().enumerate().map(|(i, s)| {
            let mut row = vec![i.to_string()];
            row.extend(s.labels.labels().iter().map(|l| l.to_string()));
            row
        }),
    )?;

    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!("{i} {}", s.scenario.seed));
        for leak in &s.scenario.leaks {
            out.push_str(&format!(
                " {}:{}:{}",
                leak.node, leak.emitter_coeff, leak.start_step
            ));
        }
        out.push('\n');
    }
    textio::write_file(dir.join(format!("{split}_scenarios.txt")), &out)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("dataset.toml");
    let manifest: DatasetManifest = toml::from_str(&textio::read_file(&manifest_path)?)
        .map_err(|e| Error::parse(&manifest_path.display().to_string(), 1, e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }

    let network = load_network(dir.join("network.txt"))?;
    let layout = SensorLayout::new(&network, manifest.pressure_sensors, manifest.flow_sensors)?;

    let patterns_path = dir.join("patterns.csv");
    let origin = patterns_path.display().to_string();
    let table = textio::read_csv(&patterns_path)?;
    let mut patterns = Vec::with_capacity(table.rows.len());
    for (idx, row) in table.rows.iter().enumerate() {
        let lineno = idx + 2;
        let id = textio::parse_usize(&origin, lineno, "pattern", &row[0])?;
        let multipliers = row[1..]
            .iter()
            .map(|cell| textio::parse_f64(&origin, lineno, "multiplier", cell))
            .collect::<Result<Vec<f64>>>()?;
        patterns.push(crate::hydrosim::DemandPattern::new(id, multipliers)?);
    }

    let persisted = load_simulation(dir.join("baseline"))?;
    if persisted.layout_fingerprint != layout.fingerprint() {
        return Err(Error::LayoutMismatch(
            "baseline simulation was recorded under a different layout".into(),
        ));
    }
    // rebuild the baseline day: states are not persisted, so re-solve it
    let baseline = crate::hydrosim::simulate(
        &network,
        &persisted.scenario,
        &patterns,
        &layout,
        persisted.noise_sigma,
    )?;
    if baseline.observations != persisted.observations {
        return Err(Error::Validation(
            "persisted baseline observations do not match a re-simulation; dataset files are inconsistent"
                .into(),
        ));
    }

    let train = read_split(dir, "train", &layout, network.node_count())?;
    let test = read_split(dir, "test", &layout, network.node_count())?;
    if train.len() != manifest.n_train || test.len() != manifest.n_test {
        return Err(Error::Validation(format!(
            "manifest promises {}/{} samples, files hold {}/{}",
            manifest.n_train,
            manifest.n_test,
            train.len(),
            test.len()
        )));
    }

    Ok(Dataset {
        network,
        patterns,
        layout,
        baseline,
        train,
        test,
        noise_sigma: manifest.noise_sigma,
    })
}

fn read_split(
    dir: &Path,
    split: &str,
    layout: &SensorLayout,
    n_nodes: usize,
) -> Result<Vec<ScenarioSample>> {
    let obs_path = dir.join(format!("{split}_observations.csv"));
    let obs_origin = obs_path.display().to_string();
    let obs_table = textio::read_csv(&obs_path)?;
    if obs_table.header.len() != layout.len() + 1 {
        return Err(Error::LayoutMismatch(format!(
            "{obs_origin}: expected {} sensor columns, found {}",
            layout.len(),
            obs_table.header.len() - 1
        )));
    }

    let labels_path = dir.join(format!("{split}_labels.csv"));
    let labels_origin = labels_path.display().to_string();
    let labels_table = textio::read_csv(&labels_path)?;

    let scenarios_path = dir.join(format!("{split}_scenarios.txt"));
    let scenarios_origin = scenarios_path.display().to_string();
    let scenarios_text = textio::read_file(&scenarios_path)?;
    let scenario_lines: Vec<&str> = scenarios_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();

    if obs_table.rows.len() != labels_table.rows.len()
        || obs_table.rows.len() != scenario_lines.len()
    {
        return Err(Error::Validation(format!(
            "{split} split files disagree on sample count: {} observations, {} label rows, {} scenarios",
            obs_table.rows.len(),
            labels_table.rows.len(),
            scenario_lines.len()
        )));
    }

    let fingerprint = layout.fingerprint();
    let mut samples = Vec::with_capacity(obs_table.rows.len());
    for i in 0..obs_table.rows.len() {
        let lineno = i + 2;
        let values = obs_table.rows[i][1..]
            .iter()
            .map(|cell| textio::parse_f64(&obs_origin, lineno, "observation", cell))
            .collect::<Result<Vec<f64>>>()?;
        let labels = labels_table.rows[i][1..]
            .iter()
            .map(|cell| textio::parse_usize(&labels_origin, lineno, "label", cell).map(|v| v as u8))
            .collect::<Result<Vec<u8>>>()?;
        if labels.len() != n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{labels_origin}:{lineno}: {} labels for a {}-node network",
                labels.len(),
                n_nodes
            )));
        }

        let fields: Vec<&str> = scenario_lines[i].split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::parse(
                &scenarios_origin,
                i + 1,
                "scenario record needs at least `index seed`",
            ));
        }
        let seed_value: u64 = fields[1].parse().map_err(|_| {
            Error::parse(&scenarios_origin, i + 1, format!("bad seed {:?}", fields[1]))
        })?;
        let mut leaks = Vec::new();
        for part in &fields[2..] {
            let pieces: Vec<&str> = part.split(':').collect();
            if pieces.len() != 3 {
                return Err(Error::parse(
                    &scenarios_origin,
                    i + 1,
                    format!("leak record {part:?} is not node:coeff:start"),
                ));
            }
            leaks.push(LeakEvent {
                node: textio::parse_usize(&scenarios_origin, i + 1, "node", pieces[0])?,
                emitter_coeff: textio::parse_f64(&scenarios_origin, i + 1, "coeff", pieces[1])?,
                start_step: textio::parse_usize(&scenarios_origin, i + 1, "start", pieces[2])?,
            });
        }

        samples.push(ScenarioSample {
            scenario: Scenario::new(leaks, seed_value)?,
            observation: ObservationVector {
                values,
                step: STEPS_PER_DAY - 1,
                layout_fingerprint: fingerprint,
            },
            labels: LabelAssignment::new(labels)?,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{build_dataset, ExperimentConfig, NetworkSpec};

    #[test]
    fn dataset_roundtrips_through_disk() {
        let config = ExperimentConfig {
            master_seed: 5,
            network: NetworkSpec::Generate { nodes: 10, seed: 2 },
            dataset: crate::harness::DatasetParams {
                n_train: 4,
                n_test: 3,
                noise_sigma: 0.02,
                ..Default::default()
            },
            ..Default::default()
        };
        let dataset = build_dataset(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &dataset).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.network, dataset.network);
        assert_eq!(loaded.patterns, dataset.patterns);
        assert_eq!(loaded.layout, dataset.layout);
        assert_eq!(loaded.train, dataset.train);
        assert_eq!(loaded.test, dataset.test);
        assert_eq!(loaded.noise_sigma, dataset.noise_sigma);
        assert_eq!(loaded.baseline.observations, dataset.baseline.observations);
    }
}
