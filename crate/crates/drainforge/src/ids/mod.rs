//! Native intrusion-detection classifiers.
//!
//! Two small models cover the toolkit's needs: a CART-style decision tree
//! and a multilayer perceptron trained by backpropagation. Both are
//! implemented here rather than pulled from a framework so that training is
//! deterministic, dependency-free and auditable; the datasets involved are
//! desk-scale.

mod metrics;
mod mlp;
mod tree;

pub use metrics::{evaluate, Metrics};
pub use mlp::{loss, loss_and_gradients, train_mlp, Gradients, MlpModel, MlpParams};
pub use tree::{train_tree, DecisionTreeModel, TreeNode, TreeParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{apply_stats, ColumnStats, Dataset};

#[derive(Debug, Error)]
pub enum IdsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("row width {got} does not match model input width {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("prediction and truth lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(u8),
    #[error("an MLP needs at least one hidden layer")]
    TooFewLayers,
    #[error("model file error: {0}")]
    BadModelFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A trained model plus the standardization it expects, as saved to disk.
///
/// Trees are trained on raw features (monotone transforms do not change
/// their splits); the MLP is trained on z-scored features, so the training
/// statistics ride along and are re-applied at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<Vec<ColumnStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Tree(DecisionTreeModel),
    Mlp(MlpModel),
}

impl ModelFile {
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<u8>, IdsError> {
        let prepared;
        let input = match &self.stats {
            Some(stats) => {
                prepared = apply_stats(dataset, stats);
                &prepared
            }
            None => dataset,
        };
        match &self.model {
            ModelKind::Tree(tree) => tree.predict(input),
            ModelKind::Mlp(mlp) => mlp.predict(input),
        }
    }

    /// Serializes to JSON with full float precision (shortest round-trip
    /// form), so save/load is lossless.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IdsError> {
        serde_json::from_str(text).map_err(|e| IdsError::BadModelFile(e.to_string()))
    }
}

pub(crate) fn check_labels(dataset: &Dataset) -> Result<(), IdsError> {
    if dataset.is_empty() {
        return Err(IdsError::EmptyDataset);
    }
    for row in &dataset.rows {
        if row.label > 1 {
            return Err(IdsError::BadLabel(row.label));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRow;

    fn blob_dataset() -> Dataset {
        // Two clearly separated blobs in 2D.
        let mut rows = Vec::new();
        for i in 0..40 {
            let t = i as f64 * 0.05;
            rows.push(DatasetRow {
                features: vec![-1.0 - t, -1.0 + t],
                label: 0,
            });
            rows.push(DatasetRow {
                features: vec![1.0 + t, 1.0 - t],
                label: 1,
            });
        }
        Dataset {
            columns: vec!["f0".into(), "f1".into()],
            rows,
        }
    }

    #[test]
    fn model_file_round_trips_tree() {
        let dataset = blob_dataset();
        let tree = train_tree(&dataset, &TreeParams::default()).unwrap();
        let file = ModelFile {
            model: ModelKind::Tree(tree),
            stats: None,
        };
        let reloaded = ModelFile::from_json(&file.to_json()).unwrap();
        assert_eq!(file, reloaded);
        let labels: Vec<u8> = dataset.rows.iter().map(|r| r.label).collect();
        assert_eq!(reloaded.predict(&dataset).unwrap(), labels);
    }

    #[test]
    fn model_file_round_trips_mlp_bit_exact() {
        let dataset = blob_dataset();
        let (std_train, _, stats) = crate::dataset::standardize(&dataset, &[]).unwrap();
        let params = MlpParams {
            epochs: 20,
            ..MlpParams::default()
        };
        let mlp = train_mlp(&std_train, &params).unwrap();
        let file = ModelFile {
            model: ModelKind::Mlp(mlp),
            stats: Some(stats),
        };
        let reloaded = ModelFile::from_json(&file.to_json()).unwrap();
        assert_eq!(file, reloaded);
        assert_eq!(
            file.predict(&dataset).unwrap(),
            reloaded.predict(&dataset).unwrap()
        );
    }
}
