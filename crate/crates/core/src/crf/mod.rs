//! The conditional random field over the network graph: label assignments,
//! the learned model and its energy, MAP inference, loss-augmented inference,
//! and calibrated per-node marginals.
//!
//! The energy of a labeling is the negated linear score, energy(y) =
//! −w·θ(x, y), so the score argmax and the energy argmin are the same
//! labeling; every solver in [`solvers`] minimizes energy.

mod platt;
mod solvers;

pub use platt::{fit_calibration, sigmoid, Calibration};
pub use solvers::{
    brute_force_min, icm_min, mincut_min, solve_min, BinaryMrf, InferenceConfig,
    BRUTE_FORCE_LIMIT,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    dot, joint_feature_from_node_features, FeatureContext, NodeFeatureVector, SampleInput,
    JOINT_FEATURE_DIM, NODE_FEATURE_DIM, PAIRWISE_OFFSET,
};
use crate::network::{SensorLayout, WaterNetwork};
use crate::textio;

/// A binary labeling over the nodes, 1 = leaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelAssignment {
    labels: Vec<u8>,
}

impl LabelAssignment {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(bad));
        }
        Ok(LabelAssignment { labels })
    }

    pub fn all_zeros(n: usize) -> Self {
        LabelAssignment {
            labels: vec![0; n],
        }
    }

    pub fn all_ones(n: usize) -> Self {
        LabelAssignment {
            labels: vec![1; n],
        }
    }

    /// Labeling with 1 exactly at the given nodes.
    pub fn from_positive_nodes(n: usize, nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut labels = vec![0u8; n];
        for v in nodes {
            *labels.get_mut(v).ok_or(Error::InvalidNode(v))? = 1;
        }
        Ok(LabelAssignment { labels })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Node ids labeled 1.
    pub fn positive_nodes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn complement(&self) -> Self {
        LabelAssignment {
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
        }
    }
}

/// Feature-map identity a model was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    /// Hop radius of the node feature neighborhoods.
    pub k: usize,
    /// Per-node feature dimension.
    pub d_f: usize,
    pub layout_fingerprint: u64,
}

/// A trained model: the weight vector, the feature-map identity, and the
/// probability calibration fitted after training.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub w: Vec<f64>,
    pub feature_config: FeatureConfig,
    pub calibration: Option<Calibration>,
    /// Free-form record of the training configuration.
    pub training_fingerprint: String,
}

impl CrfModel {
    pub fn new(w: Vec<f64>, feature_config: FeatureConfig) -> Result<Self> {
        if feature_config.d_f != NODE_FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "per-node feature dimension {} is not the supported {}",
                feature_config.d_f, NODE_FEATURE_DIM
            )));
        }
        if w.len() != JOINT_FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has dimension {}, feature map needs {}",
                w.len(),
                JOINT_FEATURE_DIM
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("model weights must be finite".into()));
        }
        Ok(CrfModel {
            w,
            feature_config,
            calibration: None,
            training_fingerprint: String::new(),
        })
    }

    fn check_layout(&self, layout: &SensorLayout) -> Result<()> {
        if layout.fingerprint() != self.feature_config.layout_fingerprint {
            return Err(Error::LayoutMismatch(format!(
                "model was trained under layout {:016x}, got {:016x}",
                self.feature_config.layout_fingerprint,
                layout.fingerprint()
            )));
        }
        Ok(())
    }

    /// Energy tables of this model on one sample.
    pub fn mrf(
        &self,
        net: &WaterNetwork,
        layout: &SensorLayout,
        input: &SampleInput,
    ) -> Result<BinaryMrf> {
        self.check_layout(layout)?;
        let ctx = FeatureContext::new(net, layout, self.feature_config.k)?;
        let features = ctx.all_node_features(input)?;
        build_mrf(&self.w, net, &features)
    }
}

/// Energy tables from a weight vector and precomputed node features: unary
/// energy −w_block(l)·f_v per node, one shared pairwise energy table, edges
/// over open pipes.
pub fn build_mrf(
    w: &[f64],
    net: &WaterNetwork,
    node_features: &[NodeFeatureVector],
) -> Result<BinaryMrf> {
    if w.len() != JOINT_FEATURE_DIM {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has dimension {}, feature map needs {}",
            w.len(),
            JOINT_FEATURE_DIM
        )));
    }
    if node_features.len() != net.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} node feature vectors for a {}-node network",
            node_features.len(),
            net.node_count()
        )));
    }
    let unary: Vec<[f64; 2]> = node_features
        .iter()
        .map(|f| {
            let mut scores = [0.0f64; 2];
            for (label, score) in scores.iter_mut().enumerate() {
                let offset = label * NODE_FEATURE_DIM;
                *score = f
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| w[offset + i] * x)
                    .sum();
            }
            [-scores[0], -scores[1]]
        })
        .collect();
    let pairwise = [
        [-w[PAIRWISE_OFFSET], -w[PAIRWISE_OFFSET + 1]],
        [-w[PAIRWISE_OFFSET + 1], -w[PAIRWISE_OFFSET + 3]],
    ];
    BinaryMrf::new(unary, pairwise, net.open_edges())
}

/// Fold the Hamming loss against `y_true` into the unary terms: minimizing
/// the result maximizes loss + score.
pub fn augment_with_hamming(mrf: &mut BinaryMrf, y_true: &LabelAssignment) -> Result<()> {
    if y_true.len() != mrf.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "labeling covers {} nodes, energy model has {}",
            y_true.len(),
            mrf.node_count()
        )));
    }
    let bonuses: Vec<[f64; 2]> = y_true
        .labels()
        .iter()
        .map(|&t| {
            let mut b = [0.0f64; 2];
            b[(1 - t) as usize] = 1.0;
            b
        })
        .collect();
    mrf.subtract_unary(&bonuses);
    Ok(())
}

/// energy(y) = −w·θ(x, y).
pub fn energy(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
    y: &LabelAssignment,
) -> Result<f64> {
    model.mrf(net, layout, input)?.energy(y)
}

/// Exact MAP by enumeration; graphs up to [`BRUTE_FORCE_LIMIT`] nodes.
pub fn brute_force_infer(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
) -> Result<LabelAssignment> {
    let mrf = model.mrf(net, layout, input)?;
    brute_force_min(&mrf).map(|(y, _)| y)
}

/// MAP inference: exact min-cut when the pairwise table is submodular,
/// otherwise ICM restarts. Deterministic for a fixed config seed.
pub fn map_infer(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
    config: &InferenceConfig,
) -> Result<LabelAssignment> {
    let mrf = model.mrf(net, layout, input)?;
    Ok(solve_min(&mrf, config, &[]))
}

/// The inner maximization of the structured hinge: argmax over labelings of
/// Hamming(ŷ, y_true) + w·θ(x, ŷ). The true labeling always competes as a
/// start, so the returned objective is never below the objective at y_true.
pub fn loss_augmented_infer(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
    y_true: &LabelAssignment,
    config: &InferenceConfig,
) -> Result<LabelAssignment> {
    let mut mrf = model.mrf(net, layout, input)?;
    augment_with_hamming(&mut mrf, y_true)?;
    Ok(solve_min(&mrf, config, &[y_true]))
}

/// Per-node probability of label 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    pub p1: Vec<f64>,
}

/// Calibrated per-node probabilities: the unary score margin of label 1,
/// conditioned on the MAP labels of the neighbors, squashed through the
/// fitted calibration. Errors when the model was trained without a
/// calibration pass.
pub fn node_marginals(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    input: &SampleInput,
    config: &InferenceConfig,
) -> Result<MarginalEstimate> {
    let calibration = model.calibration.ok_or(Error::MissingCalibration)?;
    let mrf = model.mrf(net, layout, input)?;
    let map_labels = solve_min(&mrf, config, &[]);
    let margins = mrf.conditioned_margins(&map_labels)?;
    Ok(MarginalEstimate {
        p1: margins
            .into_iter()
            .map(|m| calibration.probability(m))
            .collect(),
    })
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    k: usize,
    d_f: usize,
    layout_fingerprint: String,
    training_fingerprint: String,
    w: Vec<f64>,
    calibration_a: Option<f64>,
    calibration_b: Option<f64>,
}

pub fn model_to_string(model: &CrfModel) -> Result<String> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        k: model.feature_config.k,
        d_f: model.feature_config.d_f,
        layout_fingerprint: format!("{:016x}", model.feature_config.layout_fingerprint),
        training_fingerprint: model.training_fingerprint.clone(),
        w: model.w.clone(),
        calibration_a: model.calibration.map(|c| c.a),
        calibration_b: model.calibration.map(|c| c.b),
    };
    toml::to_string(&file).map_err(|e| Error::Validation(format!("model serialization: {e}")))
}

pub fn model_from_str(text: &str, origin: &str) -> Result<CrfModel> {
    let file: ModelFile =
        toml::from_str(text).map_err(|e| Error::parse(origin, 1, e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: file.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let layout_fingerprint = u64::from_str_radix(&file.layout_fingerprint, 16)
        .map_err(|_| Error::parse(origin, 1, "layout_fingerprint is not hex"))?;
    let mut model = CrfModel::new(
        file.w,
        FeatureConfig {
            k: file.k,
            d_f: file.d_f,
            layout_fingerprint,
        },
    )?;
    model.training_fingerprint = file.training_fingerprint;
    model.calibration = match (file.calibration_a, file.calibration_b) {
        (Some(a), Some(b)) => Some(Calibration { a, b }),
        (None, None) => None,
        _ => {
            return Err(Error::parse(
                origin,
                1,
                "calibration_a and calibration_b must come together",
            ))
        }
    };
    Ok(model)
}

pub fn save_model(model: &CrfModel, path: impl AsRef<Path>) -> Result<()> {
    textio::write_file(path, &model_to_string(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CrfModel> {
    let path = path.as_ref();
    model_from_str(
        &textio::read_file(path)?,
        &path.display().to_string(),
    )
}
