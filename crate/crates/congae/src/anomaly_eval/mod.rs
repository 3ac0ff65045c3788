//! Anomaly scoring and evaluation: reconstruction-error scores, ROC-AUC,
//! synthetic anomaly injection, Gaussian-resampled clean test sets, the
//! historical-average baseline, and the repeated-experiment runner.

mod auc;
mod experiment;
mod inject;
mod stats;

pub use auc::roc_auc;
pub use experiment::{
    run_experiment, AnomalyType, ExperimentPlan, ExperimentTable, InjectionSpec, MethodSpec,
    ResultRow,
};
pub use inject::{inject_spatial, inject_temporal, InjectionConfig};
pub use stats::{ha_score, synth_clean_testset, CellStats, HaScores, HourOfWeekStats};

use crate::backprop::snapshot_loss;
use crate::encoder::ModelVariant;
use crate::model::{ModelError, ModelParams};
use crate::nn_core::{DenseMatrix, Mode, RngStream};
use crate::od_graph::{Dataset, ODGraphResult, ODSnapshot, OdGraphError};
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] OdGraphError),
    #[error("invalid injection configuration: {0}")]
    Config(String),
    #[error("AUC undefined: {0}")]
    UndefinedMetric(String),
    #[error("non-finite anomaly score at snapshot {0}")]
    NonFiniteScore(usize),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
}

pub type EvalResult<T> = Result<T, EvalError>;

/// Snapshots plus one binary anomaly flag per snapshot.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    dataset: Dataset,
    labels: Vec<bool>,
}

impl LabeledDataset {
    pub fn new(dataset: Dataset, labels: Vec<bool>) -> ODGraphResult<Self> {
        if labels.len() != dataset.snapshots().len() {
            return Err(OdGraphError::DatasetInvariant(format!(
                "{} labels for {} snapshots",
                labels.len(),
                dataset.snapshots().len()
            )));
        }
        Ok(LabeledDataset { dataset, labels })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crate::od_graph::labeled_to_bytes(&self.dataset, &self.labels)
    }

    pub fn from_bytes(bytes: &[u8]) -> ODGraphResult<Self> {
        let (dataset, labels) = crate::od_graph::labeled_from_bytes(bytes)?;
        LabeledDataset::new(dataset, labels)
    }

    pub fn save(&self, path: &Path) -> ODGraphResult<()> {
        crate::bytesio::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> ODGraphResult<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Anomaly score of one snapshot: its eval-mode reconstruction loss over its
/// own full edge set. Higher means more anomalous.
pub fn anomaly_score(
    model: &ModelParams,
    snapshot: &ODSnapshot,
    features: &DenseMatrix,
    variant: ModelVariant,
) -> EvalResult<f64> {
    let mut rng = RngStream::new(0); // eval mode draws nothing
    let score = snapshot_loss(
        model,
        snapshot,
        snapshot.edges(),
        features,
        variant,
        0.0,
        Mode::Eval,
        &mut rng,
    )?;
    Ok(score)
}

/// Scores every snapshot of a dataset in order, in parallel.
pub fn score_dataset(
    model: &ModelParams,
    dataset: &Dataset,
    variant: ModelVariant,
) -> EvalResult<Vec<f64>> {
    let features = dataset.feature_matrix();
    dataset
        .snapshots()
        .par_iter()
        .map(|s| anomaly_score(model, s, &features, variant))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::od_graph::{context_of, Edge, WeightScaler, ZoneFeatures};
    use chrono::NaiveDate;

    pub(crate) fn test_zone(id: &str, k: f64) -> ZoneFeatures {
        ZoneFeatures {
            zone_id: id.to_string(),
            bbox: [k, k, k + 1.0, k + 1.0],
            scaled_bbox: [k / 4.0, k / 4.0, (k + 1.0) / 5.0, (k + 1.0) / 5.0],
        }
    }

    pub(crate) fn test_dataset(hours: usize) -> Dataset {
        let zones: Vec<ZoneFeatures> = (0..4)
            .map(|i| test_zone(&format!("z{i}"), i as f64))
            .collect();
        let scaler = WeightScaler::from_bounds(1.0 / 600.0, 1.0 / 60.0).unwrap();
        let start = NaiveDate::from_ymd_opt(2022, 5, 2)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let snapshots: Vec<ODSnapshot> = (0..hours)
            .map(|h| {
                let ts = start + chrono::Duration::hours(h as i64);
                let mut edges = Vec::new();
                for o in 0..4usize {
                    for d in 0..4usize {
                        if o != d && (o + d + h) % 4 != 0 {
                            let w = 0.15 + 0.7 * ((o * 4 + d + h % 3) as f64 / 20.0);
                            edges.push(Edge {
                                origin: o,
                                dest: d,
                                weight: w,
                            });
                        }
                    }
                }
                ODSnapshot::new(ts, context_of(ts), 4, edges).unwrap()
            })
            .collect();
        Dataset::new(zones, scaler, snapshots).unwrap()
    }

    fn small_model(seed: u64) -> ModelParams {
        let dims = ModelDims {
            node_count: 4,
            feature_dim: 4,
            sage_dims: vec![6, 4],
            d_hour: 3,
            d_week: 3,
            d_g: 5,
            d_e: 8,
        };
        ModelParams::init(dims, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn labeled_dataset_validates_label_length() {
        let data = test_dataset(5);
        assert!(LabeledDataset::new(data.clone(), vec![false; 4]).is_err());
        let ok = LabeledDataset::new(data, vec![false, true, false, true, false]).unwrap();
        assert_eq!(ok.positives(), 2);
    }

    #[test]
    fn labeled_dataset_round_trips_bytes() {
        let data = test_dataset(6);
        let labels = vec![true, false, false, true, false, false];
        let ld = LabeledDataset::new(data, labels.clone()).unwrap();
        let bytes = ld.to_bytes();
        let back = LabeledDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.labels(), labels.as_slice());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn anomaly_score_matches_eval_loss_and_repeats() {
        let data = test_dataset(3);
        let model = small_model(5);
        let features = data.feature_matrix();
        let snap = &data.snapshots()[1];
        let a = anomaly_score(&model, snap, &features, ModelVariant::full()).unwrap();
        let b = anomaly_score(&model, snap, &features, ModelVariant::full()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let direct = snapshot_loss(
            &model,
            snap,
            snap.edges(),
            &features,
            ModelVariant::full(),
            0.0,
            Mode::Eval,
            &mut RngStream::new(9),
        )
        .unwrap();
        assert_eq!(a.to_bits(), direct.to_bits());
    }

    #[test]
    fn score_dataset_orders_scores_by_snapshot() {
        let data = test_dataset(5);
        let model = small_model(6);
        let features = data.feature_matrix();
        let scores = score_dataset(&model, &data, ModelVariant::full()).unwrap();
        assert_eq!(scores.len(), 5);
        for (i, s) in data.snapshots().iter().enumerate() {
            let direct = anomaly_score(&model, s, &features, ModelVariant::full()).unwrap();
            assert_eq!(scores[i].to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn empty_snapshot_cannot_be_scored() {
        let data = test_dataset(2);
        let model = small_model(7);
        let features = data.feature_matrix();
        let empty = data.snapshots()[0].with_edges(vec![]).unwrap();
        assert!(anomaly_score(&model, &empty, &features, ModelVariant::full()).is_err());
    }
}
