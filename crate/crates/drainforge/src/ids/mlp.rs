//! Multilayer perceptron trained by mini-batch gradient descent.
//!
//! Architecture: an input layer, one or more rectified hidden layers, and a
//! single logistic output unit; loss is binary cross-entropy. Weights start
//! uniform in +/-1/sqrt(fan_in) from the run seed and every shuffle comes
//! from the same stream, so training is bit-reproducible.
//!
//! Expects standardized features; raw drains and timestamps span orders of
//! magnitude and stall gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_labels, IdsError};
use crate::dataset::{Dataset, DatasetRow};
use crate::rng::ForgeRng;

const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![16, 8],
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Weights are stored flattened per layer, row-major: the weight from input
/// `i` into unit `o` of layer `l` sits at `weights[l][o * fan_in + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub params: MlpParams,
}

/// Gradient of the batch loss, same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Fresh network with seeded uniform +/-1/sqrt(fan_in) weights and zero
    /// biases.
    pub fn init(input_width: usize, params: &MlpParams) -> Result<Self, IdsError> {
        if params.hidden.is_empty() {
            return Err(IdsError::TooFewLayers);
        }
        let mut layer_sizes = vec![input_width];
        layer_sizes.extend(&params.hidden);
        layer_sizes.push(1);

        let mut rng = ForgeRng::seed_from_u64(params.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..layer_sizes.len() {
            let fan_in = layer_sizes[l - 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..layer_sizes[l] * fan_in)
                .map(|_| rng.range_f64(-bound, bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; layer_sizes[l]]);
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            params: params.clone(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Per-layer post-activation values, `activations[0]` being the input.
    fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        activations.push(input.to_vec());
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let prev = &activations[l];
            let mut out = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut z = self.biases[l][o];
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                for (w, a) in row.iter().zip(prev) {
                    z += w * a;
                }
                out.push(if l == last { sigmoid(z) } else { z.max(0.0) });
            }
            activations.push(out);
        }
        activations
    }

    /// Probability that a row is an attack.
    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, IdsError> {
        if features.len() != self.input_width() {
            return Err(IdsError::WidthMismatch {
                got: features.len(),
                want: self.input_width(),
            });
        }
        Ok(self.forward(features).last().expect("output layer")[0])
    }

    /// Hard labels; probability exactly 0.5 classifies as attack.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<u8>, IdsError> {
        dataset
            .rows
            .iter()
            .map(|r| self.predict_proba(&r.features).map(|p| u8::from(p >= 0.5)))
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn bce(p: f64, y: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of the model on a batch.
pub fn loss(model: &MlpModel, rows: &[DatasetRow]) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|r| {
            let p = model.forward(&r.features).last().expect("output")[0];
            bce(p, r.label as f64)
        })
        .sum();
    total / rows.len() as f64
}

/// Mean batch loss and its exact gradient by backpropagation.
pub fn loss_and_gradients(model: &MlpModel, rows: &[DatasetRow]) -> (f64, Gradients) {
    let mut grads = Gradients {
        weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
    };
    let n = rows.len() as f64;
    let mut total_loss = 0.0;
    let layers = model.weights.len();

    for row in rows {
        let activations = model.forward(&row.features);
        let p = activations[layers][0];
        let y = row.label as f64;
        total_loss += bce(p, y);

        // d(mean BCE)/dz at the logistic output collapses to (p - y) / n.
        let mut delta = vec![(p - y) / n];

        for l in (0..layers).rev() {
            let fan_in = model.layer_sizes[l];
            let fan_out = model.layer_sizes[l + 1];
            let prev = &activations[l];
            for o in 0..fan_out {
                grads.biases[l][o] += delta[o];
                let row_w = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for (g, a) in row_w.iter_mut().zip(prev) {
                    *g += delta[o] * a;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the ReLU of layer l-1's outputs.
            let mut next_delta = vec![0.0; fan_in];
            for (i, nd) in next_delta.iter_mut().enumerate() {
                if activations[l][i] <= 0.0 {
                    continue; // rectifier gate closed
                }
                let mut sum = 0.0;
                for (o, d) in delta.iter().enumerate() {
                    sum += model.weights[l][o * fan_in + i] * d;
                }
                *nd = sum;
            }
            delta = next_delta;
        }
    }

    (total_loss / n, grads)
}

/// Trains by mini-batch gradient descent with backpropagation.
pub fn train_mlp(dataset: &Dataset, params: &MlpParams) -> Result<MlpModel, IdsError> {
    check_labels(dataset)?;
    let mut model = MlpModel::init(dataset.width(), params)?;
    let mut rng = ForgeRng::seed_from_u64(params.seed.wrapping_add(1));
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let batch_size = params.batch_size.max(1);

    for epoch in 0..params.epochs {
        rng.shuffle(&mut indices);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in indices.chunks(batch_size) {
            let rows: Vec<DatasetRow> = chunk.iter().map(|&i| dataset.rows[i].clone()).collect();
            let (batch_loss, grads) = loss_and_gradients(&model, &rows);
            epoch_loss += batch_loss;
            batches += 1.0;
            for l in 0..model.weights.len() {
                for (w, g) in model.weights[l].iter_mut().zip(&grads.weights[l]) {
                    *w -= params.learning_rate * g;
                }
                for (b, g) in model.biases[l].iter_mut().zip(&grads.biases[l]) {
                    *b -= params.learning_rate * g;
                }
            }
        }
        let finite_params = model
            .weights
            .iter()
            .chain(&model.biases)
            .flatten()
            .all(|v| v.is_finite());
        if !(epoch_loss / batches).is_finite() || !finite_params {
            return Err(IdsError::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRow;

    fn blobs(n_per_class: usize) -> Dataset {
        // Separable standardized-ish blobs around (-1,-1) and (1,1) with a
        // deterministic wobble.
        let mut rows = Vec::new();
        let mut rng = ForgeRng::seed_from_u64(42);
        for _ in 0..n_per_class {
            let (dx, dy) = (rng.range_f64(-0.4, 0.4), rng.range_f64(-0.4, 0.4));
            rows.push(DatasetRow {
                features: vec![-1.0 + dx, -1.0 + dy],
                label: 0,
            });
            let (dx, dy) = (rng.range_f64(-0.4, 0.4), rng.range_f64(-0.4, 0.4));
            rows.push(DatasetRow {
                features: vec![1.0 + dx, 1.0 + dy],
                label: 1,
            });
        }
        Dataset {
            columns: vec!["f0".into(), "f1".into()],
            rows,
        }
    }

    fn relative_error(a: f64, n: f64) -> f64 {
        (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        // (4, 16, 8, 1) network, 3-sample batch, h = 1e-5, tolerance 1e-4.
        let params = MlpParams {
            hidden: vec![16, 8],
            seed: 7,
            ..MlpParams::default()
        };
        let model = MlpModel::init(4, &params).unwrap();
        let rows = vec![
            DatasetRow {
                features: vec![0.5, -1.2, 0.3, 0.9],
                label: 1,
            },
            DatasetRow {
                features: vec![-0.7, 0.4, -1.5, 0.2],
                label: 0,
            },
            DatasetRow {
                features: vec![1.1, 0.8, -0.3, -0.6],
                label: 1,
            },
        ];
        let (_, analytic) = loss_and_gradients(&model, &rows);
        let h = 1e-5;

        for l in 0..model.weights.len() {
            for i in 0..model.weights[l].len() {
                let mut plus = model.clone();
                plus.weights[l][i] += h;
                let mut minus = model.clone();
                minus.weights[l][i] -= h;
                let numeric = (loss(&plus, &rows) - loss(&minus, &rows)) / (2.0 * h);
                let err = relative_error(analytic.weights[l][i], numeric);
                assert!(
                    err < 1e-4,
                    "weight [{l}][{i}]: analytic {} vs numeric {numeric} (err {err})",
                    analytic.weights[l][i]
                );
            }
            for i in 0..model.biases[l].len() {
                let mut plus = model.clone();
                plus.biases[l][i] += h;
                let mut minus = model.clone();
                minus.biases[l][i] -= h;
                let numeric = (loss(&plus, &rows) - loss(&minus, &rows)) / (2.0 * h);
                let err = relative_error(analytic.biases[l][i], numeric);
                assert!(
                    err < 1e-4,
                    "bias [{l}][{i}]: analytic {} vs numeric {numeric} (err {err})",
                    analytic.biases[l][i]
                );
            }
        }
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = blobs(100);
        let model = train_mlp(&data, &MlpParams::default()).unwrap();
        let pred = model.predict(&data).unwrap();
        let hits = pred
            .iter()
            .zip(&data.rows)
            .filter(|(p, r)| **p == r.label)
            .count();
        let accuracy = hits as f64 / data.len() as f64;
        assert!(accuracy >= 0.99, "training accuracy {accuracy}");
    }

    #[test]
    fn zero_epochs_is_the_untrained_baseline() {
        // Balanced labels carrying no signal: any fixed classifier scores
        // about 50%, and an untrained one is a fixed classifier.
        let mut rng = ForgeRng::seed_from_u64(5);
        let rows: Vec<DatasetRow> = (0..400)
            .map(|i| DatasetRow {
                features: vec![rng.range_f64(-1.0, 1.0), rng.range_f64(-1.0, 1.0)],
                label: (i % 2) as u8,
            })
            .collect();
        let data = Dataset {
            columns: vec!["f0".into(), "f1".into()],
            rows,
        };
        let params = MlpParams {
            epochs: 0,
            ..MlpParams::default()
        };
        let model = train_mlp(&data, &params).unwrap();
        let pred = model.predict(&data).unwrap();
        let hits = pred
            .iter()
            .zip(&data.rows)
            .filter(|(p, r)| **p == r.label)
            .count();
        let accuracy = hits as f64 / data.len() as f64;
        assert!(
            (0.35..=0.65).contains(&accuracy),
            "untrained accuracy {accuracy} should be near chance"
        );
    }

    #[test]
    fn loss_decreases_on_a_separable_set() {
        let data = blobs(50);
        let initial_model =
            MlpModel::init(data.width(), &MlpParams::default()).unwrap();
        let initial = loss(&initial_model, &data.rows);
        let trained = train_mlp(&data, &MlpParams::default()).unwrap();
        let final_loss = loss(&trained, &data.rows);
        assert!(
            final_loss < initial,
            "loss went from {initial} to {final_loss}"
        );
    }

    #[test]
    fn divergence_is_reported_not_hidden() {
        // Un-standardized features of absurd magnitude overflow the
        // gradient products within a few updates.
        let rows: Vec<DatasetRow> = (0..64)
            .map(|i| DatasetRow {
                features: vec![1e200, -1e200],
                label: (i % 2) as u8,
            })
            .collect();
        let data = Dataset {
            columns: vec!["f0".into(), "f1".into()],
            rows,
        };
        let params = MlpParams {
            epochs: 10,
            ..MlpParams::default()
        };
        match train_mlp(&data, &params) {
            Err(IdsError::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(30);
        let a = train_mlp(&data, &MlpParams::default()).unwrap();
        let b = train_mlp(&data, &MlpParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probability_half_classifies_as_attack() {
        // A zero network outputs sigmoid(0) = 0.5 exactly.
        let params = MlpParams::default();
        let mut model = MlpModel::init(2, &params).unwrap();
        for w in model.weights.iter_mut().flatten() {
            *w = 0.0;
        }
        let data = Dataset {
            columns: vec!["a".into(), "b".into()],
            rows: vec![DatasetRow {
                features: vec![3.0, -4.0],
                label: 0,
            }],
        };
        assert_eq!(model.predict_proba(&[3.0, -4.0]).unwrap(), 0.5);
        assert_eq!(model.predict(&data).unwrap(), [1]);
    }

    #[test]
    fn no_hidden_layer_is_rejected() {
        let params = MlpParams {
            hidden: vec![],
            ..MlpParams::default()
        };
        assert!(matches!(
            MlpModel::init(4, &params),
            Err(IdsError::TooFewLayers)
        ));
    }
}
