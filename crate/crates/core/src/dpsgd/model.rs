//! Small differentiable models over flat parameter vectors.
//!
//! Parameters are laid out layer by layer: the `out × in` weight matrix in
//! row-major order, then the `out` biases. Hidden layers use `tanh`; the
//! output layer is linear and feeds the loss.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Single affine layer.
    LogisticRegression,
    /// Affine layers with `tanh` between them; the vector lists hidden widths.
    Mlp(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Softmax cross-entropy on class labels.
    CrossEntropy,
    /// `Σ_k (z_k - t_k)²`, with `t` one-hot for classes or the scalar target
    /// for single-output regression.
    SquaredError,
}

/// Parameter vector of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Layer widths, input first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
    loss: Loss,
}

impl Architecture {
    pub fn new(spec: &ModelSpec, loss: Loss, inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("model", "input and output widths must be >= 1"));
        }
        if loss == Loss::CrossEntropy && outputs < 2 {
            return Err(Error::invalid("model", "cross-entropy needs at least two classes"));
        }
        let mut widths = vec![inputs];
        if let ModelSpec::Mlp(hidden) = spec {
            if hidden.contains(&0) {
                return Err(Error::invalid("model", "hidden widths must be >= 1"));
            }
            widths.extend_from_slice(hidden);
        }
        widths.push(outputs);
        Ok(Architecture { widths, loss })
    }

    pub fn for_dataset(spec: &ModelSpec, loss: Loss, data: &Dataset) -> Result<Self> {
        if loss == Loss::CrossEntropy && data.classes().is_none() {
            return Err(Error::invalid("model", "cross-entropy needs class labels"));
        }
        Self::new(spec, loss, data.dim(), data.outputs())
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// Parameter count N.
    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// 32 bits per parameter.
    pub fn model_bits(&self) -> f64 {
        32.0 * self.parameter_count() as f64
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[1] * (w[0] + 1);
            (start, w[0], w[1])
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn initial_parameters(&self, rng: &mut impl rand::Rng) -> ModelVector {
        let mut params = vec![0.0; self.parameter_count()];
        for (start, inputs, outputs) in self.layers() {
            let limit = (6.0 / (inputs + outputs) as f64).sqrt();
            for w in &mut params[start..start + inputs * outputs] {
                *w = rng.random_range(-limit..limit);
            }
        }
        ModelVector(params)
    }

    /// Activations of every layer; the last entry holds the output logits.
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let layers: Vec<_> = self.layers().collect();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (l, &(start, inputs, outputs)) in layers.iter().enumerate() {
            let input = &acts[l];
            let weights = &params[start..start + inputs * outputs];
            let bias = &params[start + inputs * outputs..start + (inputs + 1) * outputs];
            let mut z: Vec<f64> = (0..outputs)
                .map(|o| {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    row.iter().zip(input).fold(bias[o], |acc, (w, a)| acc + w * a)
                })
                .collect();
            if l + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, params: &ModelVector, x: &[f64]) -> Vec<f64> {
        self.forward(&params.0, x).pop().expect("output layer")
    }

    /// Loss of one sample and its derivative with respect to the logits.
    fn sample_loss(&self, logits: &[f64], target: f64) -> (f64, Vec<f64>) {
        match self.loss {
            Loss::CrossEntropy => {
                let label = target as usize;
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let loss = total.ln() + max - logits[label];
                let mut delta: Vec<f64> = exps.iter().map(|e| e / total).collect();
                delta[label] -= 1.0;
                (loss, delta)
            }
            Loss::SquaredError => {
                let single = logits.len() == 1;
                let mut loss = 0.0;
                let delta = logits
                    .iter()
                    .enumerate()
                    .map(|(k, z)| {
                        let t = if single {
                            target
                        } else if k == target as usize {
                            1.0
                        } else {
                            0.0
                        };
                        loss += (z - t) * (z - t);
                        2.0 * (z - t)
                    })
                    .collect();
                (loss, delta)
            }
        }
    }

    /// Mean loss over `batch` (indices into `data`).
    pub fn batch_loss(&self, params: &ModelVector, data: &Dataset, batch: &[usize]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|&i| {
                let logits = self.predict(params, data.features(i));
                self.sample_loss(&logits, data.target(i)).0
            })
            .sum();
        total / batch.len() as f64
    }

    /// Gradient of [`Architecture::batch_loss`] by backpropagation.
    pub fn gradient(&self, params: &ModelVector, data: &Dataset, batch: &[usize]) -> Vec<f64> {
        let layers: Vec<_> = self.layers().collect();
        let mut grad = vec![0.0; params.dim()];
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let acts = self.forward(&params.0, data.features(i));
            let (_, mut delta) = self.sample_loss(acts.last().expect("output"), data.target(i));
            for (l, &(start, inputs, outputs)) in layers.iter().enumerate().rev() {
                let input = &acts[l];
                for o in 0..outputs {
                    let d = delta[o] * scale;
                    let row = &mut grad[start + o * inputs..start + (o + 1) * inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[start + inputs * outputs + o] += d;
                }
                if l > 0 {
                    let weights = &params.0[start..start + inputs * outputs];
                    delta = (0..inputs)
                        .map(|k| {
                            let back: f64 = (0..outputs).map(|o| weights[o * inputs + k] * delta[o]).sum();
                            // input[k] = tanh(z), so dtanh = 1 - input².
                            back * (1.0 - input[k] * input[k])
                        })
                        .collect();
                }
            }
        }
        grad
    }

    /// Class prediction for one sample: arg-max logit (first on ties), or the
    /// rounded output for single-output regression.
    pub fn classify(&self, params: &ModelVector, x: &[f64]) -> f64 {
        let logits = self.predict(params, x);
        if logits.len() == 1 {
            return logits[0].round();
        }
        let mut best = 0;
        for (k, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = k;
            }
        }
        best as f64
    }
}

/// Gradient of node `i`'s loss on `batch` at its current model. Fails on a
/// non-finite component, naming the iteration.
pub fn local_gradient(
    arch: &Architecture,
    model: &ModelVector,
    data: &Dataset,
    batch: &[usize],
    iteration: u64,
) -> Result<Vec<f64>> {
    let grad = arch.gradient(model, data, batch);
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            message: format!("non-finite gradient component {k} at iteration {iteration}"),
            dump: format!("model: {:?}", model.0),
        });
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy and mean loss of one model over `indices`.
pub fn evaluate_model(arch: &Architecture, model: &ModelVector, data: &Dataset, indices: &[usize]) -> Evaluation {
    if indices.is_empty() {
        return Evaluation {
            accuracy: 0.0,
            loss: 0.0,
        };
    }
    let correct = indices
        .iter()
        .filter(|&&i| arch.classify(model, data.features(i)) == data.target(i))
        .count();
    Evaluation {
        accuracy: correct as f64 / indices.len() as f64,
        loss: arch.batch_loss(model, data, indices),
    }
}

/// Per-node evaluation of `models` on the whole of `data`.
pub fn evaluate(arch: &Architecture, models: &[ModelVector], data: &Dataset) -> Vec<Evaluation> {
    let all: Vec<usize> = (0..data.len()).collect();
    models.iter().map(|m| evaluate_model(arch, m, data, &all)).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn parameter_counts() {
        let a = Architecture::new(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 20, 10).unwrap();
        assert_eq!(a.parameter_count(), 210);
        assert_eq!(a.model_bits(), 6720.0);
        let m = Architecture::new(&ModelSpec::Mlp(vec![8, 4]), Loss::CrossEntropy, 3, 2).unwrap();
        assert_eq!(m.parameter_count(), 8 * 4 + 4 * 9 + 2 * 5);
        assert!(Architecture::new(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 3, 1).is_err());
        assert!(Architecture::new(&ModelSpec::Mlp(vec![0]), Loss::SquaredError, 3, 1).is_err());
    }

    #[test]
    fn squared_error_linear_gradient_is_closed_form() {
        let arch = Architecture::new(&ModelSpec::LogisticRegression, Loss::SquaredError, 3, 1).unwrap();
        let data = Dataset::new(vec![0.5, -1.0, 2.0], vec![0.75], 3, None).unwrap();
        let w = [0.2, 0.4, -0.1];
        let b = 0.3;
        let model = ModelVector(vec![w[0], w[1], w[2], b]);
        let residual = w[0] * 0.5 - w[1] + w[2] * 2.0 + b - 0.75;
        let g = arch.gradient(&model, &data, &[0]);
        let x = [0.5, -1.0, 2.0, 1.0];
        for k in 0..4 {
            assert_relative_eq!(g[k], 2.0 * residual * x[k], max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_model_on_balanced_batch_has_zero_bias_gradient() {
        let arch = Architecture::new(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 2, 2).unwrap();
        let data = Dataset::new(vec![1.0, 2.0, -1.0, -2.0], vec![0.0, 1.0], 2, Some(2)).unwrap();
        let g = arch.gradient(&ModelVector(vec![0.0; 6]), &data, &[0, 1]);
        assert_eq!(&g[4..], &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_names_iteration() {
        let arch = Architecture::new(&ModelSpec::LogisticRegression, Loss::SquaredError, 1, 1).unwrap();
        let data = Dataset::new(vec![1e300], vec![0.0], 1, None).unwrap();
        let err = local_gradient(&arch, &ModelVector(vec![1e300, 0.0]), &data, &[0], 17).unwrap_err();
        assert!(err.to_string().contains("iteration 17"));
    }

    #[test]
    fn memorizing_model_scores_one() {
        // Identity weights on one-hot inputs reproduce the label.
        let arch = Architecture::new(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 3, 3).unwrap();
        let mut params = vec![0.0; 12];
        for k in 0..3 {
            params[k * 3 + k] = 5.0;
        }
        let feats = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let data = Dataset::new(feats, vec![0.0, 1.0, 2.0], 3, Some(3)).unwrap();
        let e = evaluate(&arch, &[ModelVector(params)], &data);
        assert_eq!(e[0].accuracy, 1.0);
        assert!(e[0].loss < 0.02);
    }

    #[test]
    fn initial_parameters_depend_on_rng() {
        let arch = Architecture::new(&ModelSpec::Mlp(vec![5]), Loss::CrossEntropy, 4, 3).unwrap();
        let a = arch.initial_parameters(&mut ChaCha8Rng::seed_from_u64(1));
        let b = arch.initial_parameters(&mut ChaCha8Rng::seed_from_u64(1));
        let c = arch.initial_parameters(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
