//! CART-style decision tree with Gini impurity.
//!
//! Greedy top-down induction: at every node, try each feature and each
//! midpoint between consecutive distinct sorted values, keep the split with
//! the lowest weighted child impurity, and recurse until the node is pure,
//! too small, or at the depth cap. Ties break towards the lowest feature
//! index, then the lowest threshold, so identical inputs build identical
//! trees. A split that does not lower impurity is still taken while the
//! node is impure — parity problems need splits whose payoff only shows one
//! level deeper.

use serde::{Deserialize, Serialize};

use super::{check_labels, IdsError};
use crate::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum samples a node needs before a split is attempted.
    pub min_samples: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_samples: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        /// Majority class; ties go to class 0.
        class: u8,
        counts: [u64; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub root: TreeNode,
    pub params: TreeParams,
    pub n_features: usize,
}

impl DecisionTreeModel {
    pub fn predict_row(&self, features: &[f64]) -> Result<u8, IdsError> {
        if features.len() != self.n_features {
            return Err(IdsError::WidthMismatch {
                got: features.len(),
                want: self.n_features,
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { class, .. } => return Ok(*class),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<u8>, IdsError> {
        dataset
            .rows
            .iter()
            .map(|r| self.predict_row(&r.features))
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn training_accuracy(&self, dataset: &Dataset) -> Result<f64, IdsError> {
        let pred = self.predict(dataset)?;
        let hits = pred
            .iter()
            .zip(&dataset.rows)
            .filter(|(p, r)| **p == r.label)
            .count();
        Ok(hits as f64 / dataset.len() as f64)
    }
}

fn gini(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    weighted_impurity: f64,
}

/// Scans every feature for the impurity-minimising midpoint split.
fn find_best_split(dataset: &Dataset, indices: &[usize]) -> Option<BestSplit> {
    let n = indices.len() as f64;
    let mut best: Option<BestSplit> = None;

    for feature in 0..dataset.width() {
        let mut values: Vec<(f64, u8)> = indices
            .iter()
            .map(|&i| (dataset.rows[i].features[feature], dataset.rows[i].label))
            .collect();
        values.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

        let total = class_counts(values.iter().map(|(_, l)| *l));
        let mut left = [0u64; 2];

        for w in 0..values.len() - 1 {
            left[values[w].1 as usize] += 1;
            let (v, next) = (values[w].0, values[w + 1].0);
            if v == next {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let nl = (left[0] + left[1]) as f64;
            let nr = (right[0] + right[1]) as f64;
            let weighted = (nl * gini(left) + nr * gini(right)) / n;
            let threshold = v + (next - v) / 2.0;
            let better = match &best {
                None => true,
                Some(b) => weighted < b.weighted_impurity,
            };
            if better {
                best = Some(BestSplit {
                    feature,
                    threshold,
                    weighted_impurity: weighted,
                });
            }
        }
    }
    best
}

fn class_counts(labels: impl Iterator<Item = u8>) -> [u64; 2] {
    let mut counts = [0u64; 2];
    for label in labels {
        counts[label as usize] += 1;
    }
    counts
}

fn majority(counts: [u64; 2]) -> u8 {
    // Tie goes to the lower class.
    u8::from(counts[1] > counts[0])
}

fn grow(dataset: &Dataset, indices: &[usize], depth: usize, params: &TreeParams) -> TreeNode {
    let counts = class_counts(indices.iter().map(|&i| dataset.rows[i].label));
    let pure = counts[0] == 0 || counts[1] == 0;
    if pure || depth >= params.max_depth || indices.len() < params.min_samples {
        return TreeNode::Leaf {
            class: majority(counts),
            counts,
        };
    }
    let Some(split) = find_best_split(dataset, indices) else {
        // Every feature is constant on this node.
        return TreeNode::Leaf {
            class: majority(counts),
            counts,
        };
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| dataset.rows[i].features[split.feature] <= split.threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(dataset, &left_idx, depth + 1, params)),
        right: Box::new(grow(dataset, &right_idx, depth + 1, params)),
    }
}

/// Fits a tree to a binary-labelled dataset.
pub fn train_tree(dataset: &Dataset, params: &TreeParams) -> Result<DecisionTreeModel, IdsError> {
    check_labels(dataset)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let root = grow(dataset, &indices, 0, params);
    Ok(DecisionTreeModel {
        root,
        params: *params,
        n_features: dataset.width(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRow;

    fn dataset(rows: &[(Vec<f64>, u8)]) -> Dataset {
        Dataset {
            columns: (0..rows[0].0.len()).map(|i| format!("f{i}")).collect(),
            rows: rows
                .iter()
                .map(|(features, label)| DatasetRow {
                    features: features.clone(),
                    label: *label,
                })
                .collect(),
        }
    }

    #[test]
    fn single_separating_feature_gives_depth_one() {
        let data = dataset(&[
            (vec![0.0, 5.0], 0),
            (vec![1.0, 9.0], 0),
            (vec![10.0, 5.0], 1),
            (vec![11.0, 9.0], 1),
        ]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.training_accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn xor_needs_exactly_two_levels() {
        let data = dataset(&[
            (vec![0.0, 0.0], 0),
            (vec![0.0, 1.0], 1),
            (vec![1.0, 0.0], 1),
            (vec![1.0, 1.0], 0),
        ]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.training_accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn uniform_labels_collapse_to_a_leaf() {
        let data = dataset(&[
            (vec![0.0], 1),
            (vec![5.0], 1),
            (vec![9.0], 1),
        ]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        assert!(matches!(tree.root, TreeNode::Leaf { class: 1, .. }));
    }

    #[test]
    fn single_leaf_predicts_constantly() {
        let data = dataset(&[(vec![0.0], 0), (vec![1.0], 0)]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        let probe = dataset(&[(vec![-100.0], 0), (vec![100.0], 0)]);
        assert_eq!(tree.predict(&probe).unwrap(), [0, 0]);
    }

    #[test]
    fn pure_fit_memorizes_training_labels() {
        let data = dataset(&[
            (vec![1.0, 2.0], 0),
            (vec![2.0, 1.0], 1),
            (vec![3.0, 4.0], 0),
            (vec![4.0, 3.0], 1),
            (vec![5.0, 6.0], 0),
        ]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        let labels: Vec<u8> = data.rows.iter().map(|r| r.label).collect();
        assert_eq!(tree.predict(&data).unwrap(), labels);
    }

    #[test]
    fn training_is_deterministic() {
        let data = dataset(&[
            (vec![0.3, 1.0], 0),
            (vec![0.7, 0.2], 1),
            (vec![0.1, 0.9], 0),
            (vec![0.9, 0.4], 1),
            (vec![0.5, 0.5], 0),
        ]);
        let a = train_tree(&data, &TreeParams::default()).unwrap();
        let b = train_tree(&data, &TreeParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_is_monotone_in_depth() {
        // Noisy-ish data: deeper trees can only fit training data better.
        let mut rows = Vec::new();
        for i in 0..64 {
            let x = (i % 8) as f64;
            let y = (i / 8) as f64;
            let label = u8::from(((x as u64) ^ (y as u64)) % 3 == 0);
            rows.push((vec![x, y], label));
        }
        let data = dataset(&rows);
        let mut previous = 0.0;
        for max_depth in 1..=8 {
            let tree = train_tree(
                &data,
                &TreeParams {
                    max_depth,
                    min_samples: 2,
                },
            )
            .unwrap();
            let acc = tree.training_accuracy(&data).unwrap();
            assert!(
                acc >= previous - 1e-12,
                "depth {max_depth}: {acc} < {previous}"
            );
            previous = acc;
        }
    }

    #[test]
    fn width_mismatch_is_caught() {
        let data = dataset(&[(vec![0.0, 1.0], 0), (vec![1.0, 0.0], 1)]);
        let tree = train_tree(&data, &TreeParams::default()).unwrap();
        assert!(matches!(
            tree.predict_row(&[1.0]),
            Err(IdsError::WidthMismatch { got: 1, want: 2 })
        ));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = Dataset::empty(vec!["a".into()]);
        assert!(matches!(
            train_tree(&data, &TreeParams::default()),
            Err(IdsError::EmptyDataset)
        ));
    }
}
