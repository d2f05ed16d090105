//! Experiment configuration, loaded from structured text (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssvm::TrainingConfig;
use crate::textio;

pub const EXPERIMENT_FORMAT_VERSION: u32 = 1;

/// Where the network comes from: generated (nodes + seed) or a network file.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSpec {
    Generate { nodes: usize, seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_max_leaks")]
    pub max_leaks: usize,
    #[serde(default = "default_emitter_min")]
    pub emitter_min: f64,
    #[serde(default = "default_emitter_max")]
    pub emitter_max: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_patterns")]
    pub patterns: usize,
}

fn default_max_leaks() -> usize {
    3
}
fn default_emitter_min() -> f64 {
    0.2
}
fn default_emitter_max() -> f64 {
    1.0
}
fn default_patterns() -> usize {
    3
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_train: 2000,
            n_test: 400,
            max_leaks: default_max_leaks(),
            emitter_min: default_emitter_min(),
            emitter_max: default_emitter_max(),
            noise_sigma: 0.0,
            patterns: default_patterns(),
        }
    }
}

/// One fusion grid cell: clique radius γ and entropy gate Γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionCell {
    pub gamma: f64,
    pub entropy_gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionGrid {
    pub p_values: Vec<f64>,
    pub grid: Vec<FusionCell>,
    #[serde(default = "default_location_noise")]
    pub location_noise_sigma: f64,
    #[serde(default)]
    pub false_report_rate: f64,
}

fn default_location_noise() -> f64 {
    1.0
}

impl Default for FusionGrid {
    fn default() -> Self {
        FusionGrid {
            p_values: vec![0.3, 0.7],
            grid: vec![
                FusionCell {
                    gamma: 2.0,
                    entropy_gate: 0.0,
                },
                FusionCell {
                    gamma: 3.0,
                    entropy_gate: 0.04,
                },
            ],
            location_noise_sigma: default_location_noise(),
            false_report_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub network: NetworkSpec,
    pub dataset: DatasetParams,
    pub training: TrainingConfig,
    /// ICM restarts for phase-I inference.
    pub inference_restarts: usize,
    pub fusion: FusionGrid,
    /// Record wall-clock runtimes in the results table. Disable for
    /// byte-identical outputs across runs.
    pub record_runtime: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            network: NetworkSpec::Generate { nodes: 96, seed: 1 },
            dataset: DatasetParams::default(),
            training: TrainingConfig::default(),
            inference_restarts: 20,
            fusion: FusionGrid::default(),
            record_runtime: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_train < 1 || self.dataset.n_test < 1 {
            return Err(Error::InvalidConfig(format!(
                "dataset sizes must be >= 1, got train {} / test {}",
                self.dataset.n_train, self.dataset.n_test
            )));
        }
        if !(self.dataset.emitter_min > 0.0) || self.dataset.emitter_max < self.dataset.emitter_min
        {
            return Err(Error::InvalidConfig(format!(
                "emitter range ({}, {}) must satisfy 0 < min <= max",
                self.dataset.emitter_min, self.dataset.emitter_max
            )));
        }
        if !(self.dataset.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if self.dataset.patterns == 0 {
            return Err(Error::InvalidConfig("need at least one demand pattern".into()));
        }
        if self.fusion.p_values.is_empty() || self.fusion.grid.is_empty() {
            return Err(Error::InvalidConfig(
                "fusion p_values and (gamma, entropy_gate) grid must be nonempty".into(),
            ));
        }
        for &p in &self.fusion.p_values {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "report probability {p} outside [0, 1]"
                )));
            }
        }
        for cell in &self.fusion.grid {
            if !(cell.gamma > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gamma must be > 0, got {}",
                    cell.gamma
                )));
            }
            if !(cell.entropy_gate >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "entropy gate must be >= 0, got {}",
                    cell.entropy_gate
                )));
            }
        }
        if self.training.calibration_fraction <= 0.0 {
            return Err(Error::InvalidConfig(
                "fusion needs calibrated marginals: set training.calibration_fraction > 0".into(),
            ));
        }
        if let NetworkSpec::Generate { nodes, .. } = self.network {
            if nodes < 3 {
                return Err(Error::InvalidConfig(format!(
                    "generated network needs at least 3 nodes, got {nodes}"
                )));
            }
        }
        Ok(())
    }
}

// Serde shape of the config file; options are flattened into the enum and
// defaults applied after parsing.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    format_version: u32,
    #[serde(default)]
    master_seed: u64,
    network: NetworkSection,
    #[serde(default)]
    dataset: DatasetParams,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    inference: InferenceSection,
    #[serde(default)]
    fusion: Option<FusionGrid>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    nodes: Option<usize>,
    seed: Option<u64>,
    file: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    #[serde(default = "d_c")]
    c_penalty: f64,
    #[serde(default = "d_epochs")]
    max_epochs: usize,
    #[serde(default = "d_eta0")]
    eta0: f64,
    #[serde(default = "d_decay")]
    decay: f64,
    #[serde(default = "d_tolerance")]
    tolerance: f64,
    #[serde(default = "d_k")]
    k: usize,
    #[serde(default = "d_restarts")]
    restarts: usize,
    #[serde(default = "d_calibration")]
    calibration_fraction: f64,
}

fn d_c() -> f64 {
    0.25
}
fn d_epochs() -> usize {
    50
}
fn d_eta0() -> f64 {
    0.1
}
fn d_decay() -> f64 {
    0.01
}
fn d_tolerance() -> f64 {
    0.01
}
fn d_k() -> usize {
    2
}
fn d_restarts() -> usize {
    2
}
fn d_calibration() -> f64 {
    0.2
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            c_penalty: d_c(),
            max_epochs: d_epochs(),
            eta0: d_eta0(),
            decay: d_decay(),
            tolerance: d_tolerance(),
            k: d_k(),
            restarts: d_restarts(),
            calibration_fraction: d_calibration(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferenceSection {
    #[serde(default = "d_infer_restarts")]
    restarts: usize,
}

fn d_infer_restarts() -> usize {
    20
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            restarts: d_infer_restarts(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default = "d_record_runtime")]
    record_runtime: bool,
}

fn d_record_runtime() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            record_runtime: d_record_runtime(),
        }
    }
}

pub fn parse_experiment_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::parse(origin, 1, e.to_string()))?;
    if file.format_version != EXPERIMENT_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: file.format_version,
            expected: EXPERIMENT_FORMAT_VERSION,
        });
    }
    let network = match (file.network.file, file.network.nodes) {
        (Some(path), None) => NetworkSpec::File(path),
        (None, Some(nodes)) => NetworkSpec::Generate {
            nodes,
            seed: file.network.seed.unwrap_or(1),
        },
        _ => {
            return Err(Error::InvalidConfig(
                "[network] needs either `file` or `nodes` (+ optional `seed`), not both".into(),
            ))
        }
    };
    let config = ExperimentConfig {
        master_seed: file.master_seed,
        network,
        dataset: file.dataset,
        training: TrainingConfig {
            c_penalty: file.training.c_penalty,
            max_epochs: file.training.max_epochs,
            eta0: file.training.eta0,
            decay: file.training.decay,
            seed: 0, // derived from the master seed at run time
            tolerance: file.training.tolerance,
            k: file.training.k,
            restarts: file.training.restarts,
            calibration_fraction: file.training.calibration_fraction,
        },
        inference_restarts: file.inference.restarts,
        fusion: file.fusion.unwrap_or_default(),
        record_runtime: file.output.record_runtime,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_experiment_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    parse_experiment_config(&textio::read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
format_version = 1
master_seed = 7

[network]
nodes = 24
seed = 3

[dataset]
n_train = 40
n_test = 10
"#;
        let config = parse_experiment_config(text, "test").unwrap();
        assert_eq!(config.master_seed, 7);
        assert_eq!(
            config.network,
            NetworkSpec::Generate { nodes: 24, seed: 3 }
        );
        assert_eq!(config.dataset.n_train, 40);
        assert_eq!(config.training.c_penalty, 0.25);
        assert_eq!(config.inference_restarts, 20);
        assert_eq!(config.fusion.p_values, vec![0.3, 0.7]);
        assert_eq!(config.fusion.grid.len(), 2);
        assert!(config.record_runtime);
    }

    #[test]
    fn full_config_roundtrips_values() {
        let text = r#"
format_version = 1
master_seed = 42

[network]
file = "net.txt"

[dataset]
n_train = 10
n_test = 5
max_leaks = 2
emitter_min = 0.3
emitter_max = 0.8
noise_sigma = 0.05
patterns = 4

[training]
c_penalty = 0.5
max_epochs = 12
eta0 = 0.2
decay = 0.02
tolerance = 0.005
k = 1
restarts = 4
calibration_fraction = 0.25

[inference]
restarts = 8

[fusion]
p_values = [0.5]
location_noise_sigma = 0.5
false_report_rate = 0.1

[[fusion.grid]]
gamma = 4.0
entropy_gate = 0.1

[output]
record_runtime = false
"#;
        let config = parse_experiment_config(text, "test").unwrap();
        assert_eq!(config.network, NetworkSpec::File(PathBuf::from("net.txt")));
        assert_eq!(config.training.max_epochs, 12);
        assert_eq!(config.inference_restarts, 8);
        assert_eq!(config.fusion.grid[0].gamma, 4.0);
        assert_eq!(config.fusion.false_report_rate, 0.1);
        assert!(!config.record_runtime);
    }

    #[test]
    fn wrong_version_and_bad_grid_are_rejected() {
        let bad_version = "format_version = 2\n[network]\nnodes = 10\n[dataset]\nn_train = 1\nn_test = 1\n";
        assert!(matches!(
            parse_experiment_config(bad_version, "t"),
            Err(Error::FormatVersion { found: 2, .. })
        ));

        let empty_grid = r#"
format_version = 1
[network]
nodes = 10
[dataset]
n_train = 1
n_test = 1
[fusion]
p_values = []
grid = []
"#;
        assert!(parse_experiment_config(empty_grid, "t").is_err());
    }

    #[test]
    fn network_section_must_pick_one_source() {
        let both = r#"
format_version = 1
[network]
nodes = 10
file = "x.txt"
[dataset]
n_train = 1
n_test = 1
"#;
        assert!(parse_experiment_config(both, "t").is_err());
    }
}
