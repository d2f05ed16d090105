//! On-disk form of a single simulated day: an observations matrix (rows =
//! time steps, columns = sensors named `p<node>`/`f<pipe>`), a labels matrix
//! (rows = steps, columns = nodes named `n<id>`), and a scenario manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::LabelAssignment;
use crate::error::{Error, Result};
use crate::features::ObservationVector;
use crate::hydrosim::{LeakEvent, Scenario, SimulationResult, STEPS_PER_DAY};
use crate::network::SensorLayout;
use crate::textio;

pub const SIM_FORMAT_VERSION: u32 = 1;

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "scenario.toml";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    noise_sigma: f64,
    /// Sensor-layout fingerprint, hex encoded (TOML integers are i64).
    layout_fingerprint: String,
    #[serde(default)]
    leaks: Vec<LeakEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LeakEntry {
    node: usize,
    emitter_coeff: f64,
    start_step: usize,
}

/// What `load_simulation` recovers: everything persisted about a run (the
/// solved states themselves are not part of the on-disk format).
#[derive(Debug, Clone, PartialEq)]
pub struct PersistedSimulation {
    pub scenario: Scenario,
    pub observations: Vec<ObservationVector>,
    pub labels: Vec<LabelAssignment>,
    pub noise_sigma: f64,
    pub layout_fingerprint: u64,
}

pub fn save_simulation(
    dir: impl AsRef<Path>,
    result: &SimulationResult,
    layout: &SensorLayout,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut header = vec!["step".to_string()];
    header.extend(layout.column_names());
    textio::write_csv(
        dir.join(OBSERVATIONS_FILE),
        &header,
        result.observations.iter().map(|obs| {
            let mut row = vec![obs.step.to_string()];
            row.extend(obs.values.iter().map(|v| v.to_string()));
            row
        }),
    )?;

    let n_nodes = result
        .labels
        .first()
        .map(|l| l.labels().len())
        .unwrap_or(0);
    let mut header = vec!["step".to_string()];
    header.extend((0..n_nodes).map(|v| format!("n{v}")));
    textio::write_csv(
        dir.join(LABELS_FILE),
        &header,
        result.labels.iter().enumerate().map(|(step, labels)| {
            let mut row = vec![step.to_string()];
            row.extend(labels.labels().iter().map(|l| l.to_string()));
            row
        }),
    )?;

    let manifest = Manifest {
        format_version: SIM_FORMAT_VERSION,
        seed: result.scenario.seed,
        noise_sigma: result.noise_sigma,
        layout_fingerprint: format!("{:016x}", layout.fingerprint()),
        leaks: result
            .scenario
            .leaks
            .iter()
            .map(|l| LeakEntry {
                node: l.node,
                emitter_coeff: l.emitter_coeff,
                start_step: l.start_step,
            })
            .collect(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
    textio::write_file(dir.join(MANIFEST_FILE), &text)
}

pub fn load_simulation(dir: impl AsRef<Path>) -> Result<PersistedSimulation> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = toml::from_str(&textio::read_file(&manifest_path)?).map_err(|e| {
        Error::parse(&manifest_path.display().to_string(), 1, e.to_string())
    })?;
    if manifest.format_version != SIM_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: manifest.format_version,
            expected: SIM_FORMAT_VERSION,
        });
    }
    let layout_fingerprint = u64::from_str_radix(&manifest.layout_fingerprint, 16)
        .map_err(|_| {
            Error::parse(
                &manifest_path.display().to_string(),
                1,
                "layout_fingerprint is not hex",
            )
        })?;
    let scenario = Scenario::new(
        manifest
            .leaks
            .iter()
            .map(|l| LeakEvent {
                node: l.node,
                emitter_coeff: l.emitter_coeff,
                start_step: l.start_step,
            })
            .collect(),
        manifest.seed,
    )?;

    let obs_path = dir.join(OBSERVATIONS_FILE);
    let obs_origin = obs_path.display().to_string();
    let table = textio::read_csv(&obs_path)?;
    let mut observations = Vec::with_capacity(table.rows.len());
    for (idx, row) in table.rows.iter().enumerate() {
        let lineno = idx + 2;
        let step = textio::parse_usize(&obs_origin, lineno, "step", &row[0])?;
        let values = row[1..]
            .iter()
            .map(|cell| textio::parse_f64(&obs_origin, lineno, "observation", cell))
            .collect::<Result<Vec<f64>>>()?;
        observations.push(ObservationVector {
            values,
            step,
            layout_fingerprint,
        });
    }

    let labels_path = dir.join(LABELS_FILE);
    let labels_origin = labels_path.display().to_string();
    let table = textio::read_csv(&labels_path)?;
    let mut labels = Vec::with_capacity(table.rows.len());
    for (idx, row) in table.rows.iter().enumerate() {
        let lineno = idx + 2;
        let values = row[1..]
            .iter()
            .map(|cell| {
                textio::parse_usize(&labels_origin, lineno, "label", cell).map(|v| v as u8)
            })
            .collect::<Result<Vec<u8>>>()?;
        labels.push(LabelAssignment::new(values)?);
    }

    if observations.len() != STEPS_PER_DAY || labels.len() != STEPS_PER_DAY {
        return Err(Error::Validation(format!(
            "persisted simulation must cover {STEPS_PER_DAY} steps, got {} observations and {} label rows",
            observations.len(),
            labels.len()
        )));
    }

    Ok(PersistedSimulation {
        scenario,
        observations,
        labels,
        noise_sigma: manifest.noise_sigma,
        layout_fingerprint,
    })
}
