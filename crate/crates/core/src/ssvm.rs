//! Max-margin training of the CRF weights.
//!
//! The objective is the regularized structured hinge loss
//!
//! ```text
//! min_w  Σ_n [ max_ŷ ( Δ(ŷ, y_n) + w·θ(x_n, ŷ) ) − w·θ(x_n, y_n) ]  +  (C/2)‖w‖²
//! ```
//!
//! with Δ the per-node Hamming loss, so the inner maximization is ordinary
//! loss-augmented MAP inference. Note the convention: C multiplies the
//! regularizer, not the empirical term, so larger C means stronger
//! regularization. Training is stochastic subgradient descent with step size
//! η_t = η₀ / (1 + t·decay); the returned weights are the best full-objective
//! iterate seen, and a Platt calibration pass on a held-out tail of the
//! dataset fits the probability map used by report fusion.

use rayon::prelude::*;

use crate::crf::{
    augment_with_hamming, build_mrf, fit_calibration, solve_min, CrfModel, FeatureConfig,
    InferenceConfig, LabelAssignment,
};
use crate::error::{Error, Result};
use crate::features::{
    joint_feature_from_node_features, FeatureContext, NodeFeatureVector, SampleInput,
    JOINT_FEATURE_DIM, NODE_FEATURE_DIM,
};
use crate::network::{SensorLayout, WaterNetwork};
use crate::seed;
use crate::textio;

/// One training pair: a recorded observation (with its baseline) and the
/// ground-truth leak labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: SampleInput,
    pub labels: LabelAssignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Regularization trade-off C.
    pub c_penalty: f64,
    pub max_epochs: usize,
    /// Initial step size η₀.
    pub eta0: f64,
    /// Step-size decay: η_t = η₀ / (1 + t·decay).
    pub decay: f64,
    pub seed: u64,
    /// Stop when the relative objective change between epochs drops below
    /// this. Zero disables early stopping.
    pub tolerance: f64,
    /// Hop radius of the node features.
    pub k: usize,
    /// ICM restarts for the inner inference (submodular instances take the
    /// exact min-cut path regardless).
    pub restarts: usize,
    /// Fraction of the dataset held out (from the tail) for calibration.
    pub calibration_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            c_penalty: 0.25,
            max_epochs: 50,
            eta0: 0.1,
            decay: 0.01,
            seed: 0,
            tolerance: 0.01,
            k: 2,
            restarts: 2,
            calibration_fraction: 0.2,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c_penalty > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "c_penalty must be > 0, got {}",
                self.c_penalty
            )));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if !(self.eta0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step schedule needs eta0 > 0 and decay >= 0, got ({}, {})",
                self.eta0, self.decay
            )));
        }
        if !(0.0..1.0).contains(&self.calibration_fraction) {
            return Err(Error::InvalidConfig(format!(
                "calibration_fraction must be in [0, 1), got {}",
                self.calibration_fraction
            )));
        }
        Ok(())
    }

    fn fingerprint(&self, n_samples: usize) -> String {
        format!(
            "n={} c={} epochs={} eta0={} decay={} seed={} tolerance={} k={} restarts={} calibration_fraction={}",
            n_samples,
            self.c_penalty,
            self.max_epochs,
            self.eta0,
            self.decay,
            self.seed,
            self.tolerance,
            self.k,
            self.restarts,
            self.calibration_fraction
        )
    }
}

/// Positions where two labelings differ.
pub fn hamming_loss(y1: &LabelAssignment, y2: &LabelAssignment) -> Result<usize> {
    if y1.len() != y2.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings cover {} and {} nodes",
            y1.len(),
            y2.len()
        )));
    }
    Ok(y1
        .labels()
        .iter()
        .zip(y2.labels())
        .filter(|(a, b)| a != b)
        .count())
}

/// Per-sample hinge term max_ŷ [Δ(ŷ, y) + w·θ(x, ŷ)] − w·θ(x, y), evaluated
/// through loss-augmented inference. Nonnegative: the true labeling always
/// competes in the maximization.
pub fn structured_hinge_loss(
    model: &CrfModel,
    net: &WaterNetwork,
    layout: &SensorLayout,
    sample: &TrainingSample,
    config: &InferenceConfig,
) -> Result<f64> {
    let mut mrf = model.mrf(net, layout, &sample.input)?;
    augment_with_hamming(&mut mrf, &sample.labels)?;
    let y_hat = solve_min(&mrf, config, &[&sample.labels]);
    Ok(mrf.energy(&sample.labels)? - mrf.energy(&y_hat)?)
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Full objective: total hinge + (C/2)‖w‖².
    pub objective: f64,
    pub hinge_total: f64,
    pub w_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CrfModel,
    pub metrics: Vec<EpochMetrics>,
    /// Objective of the returned (best) weights.
    pub final_objective: f64,
}

struct PreparedSample<'a> {
    features: Vec<NodeFeatureVector>,
    labels: &'a LabelAssignment,
}

fn hinge_of(
    w: &[f64],
    net: &WaterNetwork,
    sample: &PreparedSample,
    config: &InferenceConfig,
) -> Result<f64> {
    let mut mrf = build_mrf(w, net, &sample.features)?;
    augment_with_hamming(&mut mrf, sample.labels)?;
    let y_hat = solve_min(&mrf, config, &[sample.labels]);
    Ok(mrf.energy(sample.labels)? - mrf.energy(&y_hat)?)
}

/// Train a model. Deterministic for a fixed config seed and sample order.
pub fn train(
    samples: &[TrainingSample],
    net: &WaterNetwork,
    layout: &SensorLayout,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let fingerprint = layout.fingerprint();
    for (i, sample) in samples.iter().enumerate() {
        if sample.labels.len() != net.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "sample {i}: labeling covers {} nodes, network has {}",
                sample.labels.len(),
                net.node_count()
            )));
        }
        if sample.input.observation.layout_fingerprint != fingerprint {
            return Err(Error::LayoutMismatch(format!(
                "sample {i} was recorded under a different sensor layout"
            )));
        }
    }

    let n_calibration = (samples.len() as f64 * config.calibration_fraction).floor() as usize;
    let n_train = samples.len() - n_calibration;
    if n_train == 0 {
        return Err(Error::InvalidConfig(
            "calibration split leaves no training samples".into(),
        ));
    }

    let ctx = FeatureContext::new(net, layout, config.k)?;
    let prepared: Vec<PreparedSample> = samples
        .par_iter()
        .map(|s| {
            ctx.all_node_features(&s.input).map(|features| PreparedSample {
                features,
                labels: &s.labels,
            })
        })
        .collect::<Result<_>>()?;
    let (train_set, calibration_set) = prepared.split_at(n_train);

    let mut w = vec![0.0f64; JOINT_FEATURE_DIM];
    let mut metrics = Vec::with_capacity(config.max_epochs);
    let mut best_w = w.clone();
    let mut best_objective = f64::INFINITY;
    let mut previous_objective = f64::INFINITY;
    let mut t: u64 = 0;
    let reg_per_sample = config.c_penalty / n_train as f64;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = seed::rng(seed::derive(config.seed, 11, epoch as u64));
            order.shuffle(&mut rng);
        }

        for &idx in &order {
            let sample = &train_set[idx];
            let mut mrf = build_mrf(&w, net, &sample.features)?;
            augment_with_hamming(&mut mrf, sample.labels)?;
            let infer = InferenceConfig {
                restarts: config.restarts,
                seed: seed::derive(config.seed, 13, t),
                ..Default::default()
            };
            let y_hat = solve_min(&mrf, &infer, &[sample.labels]);

            let theta_hat = joint_feature_from_node_features(net, &sample.features, &y_hat)?;
            let theta_true =
                joint_feature_from_node_features(net, &sample.features, sample.labels)?;
            let eta = config.eta0 / (1.0 + t as f64 * config.decay);
            for i in 0..JOINT_FEATURE_DIM {
                let subgrad = theta_hat.values[i] - theta_true.values[i] + reg_per_sample * w[i];
                w[i] -= eta * subgrad;
            }
            t += 1;
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::TrainingDiverged(format!(
                    "weights left the finite range at epoch {epoch}, step {t}; lower eta0 (currently {})",
                    config.eta0
                )));
            }
        }

        let hinge_total: f64 = train_set
            .par_iter()
            .enumerate()
            .map(|(idx, sample)| {
                let infer = InferenceConfig {
                    restarts: config.restarts,
                    seed: seed::derive(config.seed, 17, idx as u64),
                    ..Default::default()
                };
                hinge_of(&w, net, sample, &infer)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum();
        let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let objective = hinge_total + 0.5 * config.c_penalty * w_norm * w_norm;
        if !objective.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "objective left the finite range at epoch {epoch}; lower eta0 (currently {})",
                config.eta0
            )));
        }
        metrics.push(EpochMetrics {
            epoch,
            objective,
            hinge_total,
            w_norm,
        });
        if objective < best_objective {
            best_objective = objective;
            best_w.copy_from_slice(&w);
        }
        let relative_change =
            (previous_objective - objective).abs() / previous_objective.abs().max(1.0);
        if config.tolerance > 0.0 && epoch > 1 && relative_change < config.tolerance {
            break;
        }
        previous_objective = objective;
    }

    let mut model = CrfModel::new(
        best_w,
        FeatureConfig {
            k: config.k,
            d_f: NODE_FEATURE_DIM,
            layout_fingerprint: fingerprint,
        },
    )?;
    model.training_fingerprint = config.fingerprint(samples.len());

    if !calibration_set.is_empty() {
        let pooled: Vec<(f64, bool)> = calibration_set
            .par_iter()
            .enumerate()
            .map(|(idx, sample)| {
                let mrf = build_mrf(&model.w, net, &sample.features)?;
                let infer = InferenceConfig {
                    restarts: config.restarts,
                    seed: seed::derive(config.seed, 19, idx as u64),
                    ..Default::default()
                };
                let map_labels = solve_min(&mrf, &infer, &[]);
                let margins = mrf.conditioned_margins(&map_labels)?;
                Ok(margins
                    .into_iter()
                    .zip(sample.labels.labels())
                    .map(|(m, &l)| (m, l == 1))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let margins: Vec<f64> = pooled.iter().map(|&(m, _)| m).collect();
        let truths: Vec<bool> = pooled.iter().map(|&(_, t)| t).collect();
        model.calibration = Some(fit_calibration(&margins, &truths));
    }

    Ok(TrainOutcome {
        model,
        metrics,
        final_objective: best_objective,
    })
}

/// Write the per-epoch metrics log as delimited text.
pub fn write_metrics(path: impl AsRef<std::path::Path>, metrics: &[EpochMetrics]) -> Result<()> {
    textio::write_csv(
        path,
        &["epoch", "objective", "hinge", "w_norm"].map(String::from),
        metrics.iter().map(|m| {
            vec![
                m.epoch.to_string(),
                m.objective.to_string(),
                m.hinge_total.to_string(),
                m.w_norm.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::brute_force_min;
    use crate::features::ObservationVector;
    use crate::network::{generate_benchmark_network, NodeRecord, SourceRecord};
    use rand::Rng;

    fn observation(values: Vec<f64>, layout: &SensorLayout) -> ObservationVector {
        ObservationVector {
            values,
            step: 95,
            layout_fingerprint: layout.fingerprint(),
        }
    }

    /// Dataset where the own-pressure residual alone decides the label:
    /// residual −2 at leaking nodes, +2 elsewhere. Pressure-only layout and
    /// k = 0 make the node features [r, r, r, r, 1].
    fn separable_dataset(
        net: &WaterNetwork,
        layout: &SensorLayout,
        n_samples: usize,
        seed_value: u64,
    ) -> Vec<TrainingSample> {
        let mut rng = seed::rng(seed_value);
        (0..n_samples)
            .map(|_| {
                let labels: Vec<u8> =
                    (0..net.node_count()).map(|_| rng.random_range(0..2u8)).collect();
                let values: Vec<f64> = labels
                    .iter()
                    .map(|&l| if l == 1 { -2.0 } else { 2.0 })
                    .collect();
                TrainingSample {
                    input: SampleInput::new(
                        observation(values, layout),
                        observation(vec![0.0; layout.len()], layout),
                    )
                    .unwrap(),
                    labels: LabelAssignment::new(labels).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn hamming_loss_counts_differences() {
        let a = LabelAssignment::new(vec![0, 1, 1, 0]).unwrap();
        let b = LabelAssignment::new(vec![0, 0, 1, 1]).unwrap();
        assert_eq!(hamming_loss(&a, &b).unwrap(), 2);
        assert_eq!(hamming_loss(&a, &a).unwrap(), 0);
        assert_eq!(hamming_loss(&a, &a.complement()).unwrap(), 4);
        let c = LabelAssignment::new(vec![0, 1]).unwrap();
        assert!(hamming_loss(&a, &c).is_err());
    }

    #[test]
    fn zero_weight_hinge_equals_node_count() {
        let net = generate_benchmark_network(7, 1).unwrap();
        let layout = SensorLayout::new(&net, (0..net.node_count()).collect(), vec![]).unwrap();
        let model = CrfModel::new(
            vec![0.0; JOINT_FEATURE_DIM],
            FeatureConfig {
                k: 0,
                d_f: NODE_FEATURE_DIM,
                layout_fingerprint: layout.fingerprint(),
            },
        )
        .unwrap();
        let sample = &separable_dataset(&net, &layout, 1, 3)[0];
        let hinge = structured_hinge_loss(
            &model,
            &net,
            &layout,
            sample,
            &InferenceConfig::default(),
        )
        .unwrap();
        // with w = 0 every flip gains exactly 1, the complement attains |V|
        assert_eq!(hinge, net.node_count() as f64);
    }

    #[test]
    fn hinge_matches_brute_force_maximum_on_small_graphs() {
        let net = generate_benchmark_network(8, 5).unwrap();
        let layout = SensorLayout::full(&net);
        let mut rng = seed::rng(6);
        let ctx = FeatureContext::new(&net, &layout, 2).unwrap();
        for trial in 0..25 {
            let w: Vec<f64> = (0..JOINT_FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let model = CrfModel::new(
                w,
                FeatureConfig {
                    k: 2,
                    d_f: NODE_FEATURE_DIM,
                    layout_fingerprint: layout.fingerprint(),
                },
            )
            .unwrap();
            let values: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let baseline: Vec<f64> =
                (0..layout.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<u8> =
                (0..net.node_count()).map(|_| rng.random_range(0..2u8)).collect();
            let sample = TrainingSample {
                input: SampleInput::new(
                    observation(values, &layout),
                    observation(baseline, &layout),
                )
                .unwrap(),
                labels: LabelAssignment::new(labels).unwrap(),
            };

            let hinge = structured_hinge_loss(
                &model,
                &net,
                &layout,
                &sample,
                &InferenceConfig::default(),
            )
            .unwrap();

            // brute-force oracle over the augmented objective
            let features = ctx.all_node_features(&sample.input).unwrap();
            let mut mrf = build_mrf(&model.w, &net, &features).unwrap();
            augment_with_hamming(&mut mrf, &sample.labels).unwrap();
            let (_, min_aug) = brute_force_min(&mrf).unwrap();
            let exact = mrf.energy(&sample.labels).unwrap() - min_aug;
            assert!(
                (hinge - exact).abs() < 1e-9,
                "trial {trial}: hinge {hinge} vs exact {exact}"
            );
            assert!(hinge >= -1e-12);
        }
    }

    #[test]
    fn training_on_separable_data_drives_hinge_to_zero() {
        let net = generate_benchmark_network(6, 2).unwrap();
        let layout = SensorLayout::new(&net, (0..net.node_count()).collect(), vec![]).unwrap();
        let samples = separable_dataset(&net, &layout, 40, 7);
        let config = TrainingConfig {
            max_epochs: 120,
            eta0: 0.3,
            decay: 0.02,
            tolerance: 0.0,
            k: 0,
            seed: 1,
            ..Default::default()
        };
        let outcome = train(&samples, &net, &layout, &config).unwrap();
        let n_train = samples.len() - (samples.len() as f64 * 0.2).floor() as usize;
        let hinge_total: f64 = samples[..n_train]
            .iter()
            .map(|s| {
                structured_hinge_loss(
                    &outcome.model,
                    &net,
                    &layout,
                    s,
                    &InferenceConfig::default(),
                )
                .unwrap()
            })
            .sum();
        let per_node_per_sample = hinge_total / (net.node_count() * n_train) as f64;
        assert!(
            per_node_per_sample <= 1e-3,
            "hinge per node per sample {per_node_per_sample}"
        );
        assert!(outcome.model.calibration.is_some());
    }

    #[test]
    fn single_node_training_matches_analytic_minimum() {
        // one source node, no pipes; only the bias feature is active, so the
        // objective reduces to g(m) = max(0, 1 − m) + (C/4)·m² over the bias
        // weight difference m, minimized at m = 1 with value C/4
        let net = WaterNetwork::new(
            vec![NodeRecord {
                id: 0,
                coord: [0.0, 0.0],
                elevation: 0.0,
                base_demand: 0.0,
                demand_pattern_id: 0,
            }],
            vec![],
            vec![SourceRecord { node: 0, head: 10.0 }],
        )
        .unwrap();
        let layout = SensorLayout::new(&net, vec![0], vec![]).unwrap();
        let sample = TrainingSample {
            input: SampleInput::new(
                observation(vec![5.0], &layout),
                observation(vec![5.0], &layout),
            )
            .unwrap(),
            labels: LabelAssignment::new(vec![1]).unwrap(),
        };
        let config = TrainingConfig {
            c_penalty: 0.25,
            max_epochs: 30_000,
            eta0: 0.1,
            decay: 0.02,
            tolerance: 0.0,
            k: 0,
            calibration_fraction: 0.0,
            seed: 3,
            ..Default::default()
        };
        let outcome = train(&[sample], &net, &layout, &config).unwrap();
        let analytic = 0.25 / 4.0;
        assert!(
            (outcome.final_objective - analytic).abs() <= 1e-3,
            "objective {} vs analytic {analytic}",
            outcome.final_objective
        );
        let bias1 = outcome.model.w[NODE_FEATURE_DIM + NODE_FEATURE_DIM - 1];
        let bias0 = outcome.model.w[NODE_FEATURE_DIM - 1];
        assert!(
            ((bias1 - bias0) - 1.0).abs() <= 2e-2,
            "margin {} vs 1",
            bias1 - bias0
        );
    }

    #[test]
    fn training_is_deterministic() {
        let net = generate_benchmark_network(6, 4).unwrap();
        let layout = SensorLayout::new(&net, (0..net.node_count()).collect(), vec![]).unwrap();
        let samples = separable_dataset(&net, &layout, 12, 9);
        let config = TrainingConfig {
            max_epochs: 10,
            tolerance: 0.0,
            k: 0,
            seed: 5,
            ..Default::default()
        };
        let a = train(&samples, &net, &layout, &config).unwrap();
        let b = train(&samples, &net, &layout, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(
            crate::crf::model_to_string(&a.model).unwrap(),
            crate::crf::model_to_string(&b.model).unwrap()
        );
    }

    #[test]
    fn objective_is_nonincreasing_within_tolerance_on_small_problems() {
        let net = generate_benchmark_network(8, 6).unwrap();
        let layout = SensorLayout::new(&net, (0..net.node_count()).collect(), vec![]).unwrap();
        let samples = separable_dataset(&net, &layout, 20, 11);
        let config = TrainingConfig {
            max_epochs: 40,
            tolerance: 0.0,
            k: 0,
            seed: 7,
            ..Default::default()
        };
        let outcome = train(&samples, &net, &layout, &config).unwrap();
        for pair in outcome.metrics.windows(2) {
            assert!(
                pair[1].objective <= pair[0].objective * 1.05 + 1e-9,
                "epoch {} objective {} rose past 5% over {}",
                pair[1].epoch,
                pair[1].objective,
                pair[0].objective
            );
        }
        assert!(outcome.metrics.last().unwrap().objective <= outcome.metrics[0].objective);
    }

    #[test]
    fn metrics_log_writes_delimited_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(
            &path,
            &[EpochMetrics {
                epoch: 1,
                objective: 10.5,
                hinge_total: 10.0,
                w_norm: 2.0,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,objective,hinge,w_norm\n1,10.5,10,2\n");
    }
}
