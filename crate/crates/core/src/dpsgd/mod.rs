//! Round-synchronous D-PSGD.
//!
//! Each iteration every node samples a mini-batch from its own shard,
//! exchanges models with its neighbours, averages them with the weights of
//! `W`, and applies the gradient evaluated at its pre-averaging model:
//!
//! ```text
//! x_{k+1,i} = Σ_j W_ij x_{k,j} - η ∇F_i(x_{k,i}; ξ_{k,i})
//! ```
//!
//! Wall-clock cost per iteration is the local compute time plus the TDM
//! round time `t_com` of the active rate assignment.

mod data;
mod model;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{Dataset, GaussianClusters, Partition, SyntheticSpec};
pub use model::{evaluate, evaluate_model, local_gradient, Architecture, Evaluation, Loss, ModelSpec, ModelVector};

use crate::consensus::{averaging_matrix, AveragingMatrix};
use crate::error::{Error, Result};
use crate::optimizer::RateAssignment;
use crate::propagation::NodeLayout;

const INIT_STREAM: u64 = 1;

/// How local computation time is charged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ComputeTime {
    /// Fixed seconds per iteration; traces are machine independent.
    Constant(f64),
    /// Measured wall-clock time of the gradient phase.
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Defaults to `⌈largest shard / batch_size⌉`.
    pub iterations_per_epoch: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub loss: Loss,
    pub compute: ComputeTime,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            batch_size: 1,
            iterations_per_epoch: None,
            epochs: 10,
            seed: 0,
            model: ModelSpec::LogisticRegression,
            loss: Loss::CrossEntropy,
            compute: ComputeTime::Constant(1e-3),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("training config", reason.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations_per_epoch must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if let ComputeTime::Constant(c) = self.compute {
            if !(c >= 0.0 && c.is_finite()) {
                return bad("compute seconds per iteration must be >= 0");
            }
        }
        Ok(())
    }
}

/// `n` identical copies of the seed-determined starting point.
pub fn initialize(arch: &Architecture, seed: u64, n: usize) -> Vec<ModelVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let x0 = arch.initial_parameters(&mut rng);
    vec![x0; n]
}

/// One D-PSGD update: `x_i ← Σ_j W_ij x_j - η g_i`, summing over `j` in
/// index order.
pub fn dpsgd_step(
    models: &[ModelVector],
    w: &AveragingMatrix,
    gradients: &[Vec<f64>],
    learning_rate: f64,
) -> Result<Vec<ModelVector>> {
    let n = models.len();
    if w.len() != n || gradients.len() != n {
        return Err(Error::Contract(format!(
            "{n} models, {} gradients and a {}x{} averaging matrix",
            gradients.len(),
            w.len(),
            w.len()
        )));
    }
    let dim = models.first().map_or(0, ModelVector::dim);
    if models.iter().any(|m| m.dim() != dim) || gradients.iter().any(|g| g.len() != dim) {
        return Err(Error::Contract("models and gradients must share one dimension".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut next = vec![0.0; dim];
            for (j, model) in models.iter().enumerate() {
                let weight = w.get(i, j);
                if weight != 0.0 {
                    for (acc, x) in next.iter_mut().zip(&model.0) {
                        *acc += weight * x;
                    }
                }
            }
            for (acc, g) in next.iter_mut().zip(&gradients[i]) {
                *acc -= learning_rate * g;
            }
            ModelVector(next)
        })
        .collect())
}

/// One row of a trace: a node's state at the end of an epoch. Epoch 0 is
/// the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub node: usize,
    /// Accuracy on the node's own shard.
    pub accuracy: f64,
    /// Mean loss on the node's own shard.
    pub loss: f64,
    pub compute_s: f64,
    pub comm_s: f64,
    pub total_s: f64,
    /// Accuracy on the held-out split, when one is given.
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    pub nodes: usize,
    pub iterations_per_epoch: usize,
    pub t_com: f64,
    pub lambda: f64,
    /// TDM broadcast order (west to east). It fixes the airtime schedule
    /// only; the exchanged values do not depend on it.
    pub tdm_order: Vec<usize>,
}

impl TrainingTrace {
    pub fn node_records(&self, node: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.node == node)
    }

    pub fn final_accuracy(&self, node: usize) -> Option<f64> {
        self.node_records(node).last().map(|r| r.accuracy)
    }

    /// Cumulative time at which `node`'s training accuracy first reaches
    /// `threshold`, interpolated linearly between the bracketing epochs.
    pub fn time_to_accuracy(&self, node: usize, threshold: f64) -> Option<f64> {
        let mut previous: Option<&EpochRecord> = None;
        for r in self.node_records(node) {
            if r.accuracy >= threshold {
                return Some(match previous {
                    None => r.total_s,
                    Some(p) => {
                        let frac = (threshold - p.accuracy) / (r.accuracy - p.accuracy);
                        p.total_s + frac * (r.total_s - p.total_s)
                    }
                });
            }
            previous = Some(r);
        }
        None
    }
}

/// Training and optional held-out data.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Runs `epochs × iterations_per_epoch` D-PSGD iterations over the topology
/// of `assignment`. On a numerical failure the error carries the trace up to
/// the last completed epoch.
pub fn train(
    layout: &NodeLayout,
    assignment: &RateAssignment,
    config: &TrainingConfig,
    data: &TrainingData,
) -> Result<TrainingTrace> {
    config.validate()?;
    let n = layout.len();
    if assignment.rates.len() != n || assignment.topology.len() != n {
        return Err(Error::Contract(format!(
            "assignment covers {} nodes, layout has {n}",
            assignment.rates.len()
        )));
    }
    let arch = Architecture::for_dataset(&config.model, config.loss, &data.train)?;
    if let Some(test) = &data.test {
        if test.dim() != data.train.dim() || test.outputs() != data.train.outputs() {
            return Err(Error::Contract(
                "test split does not match the training data shape".into(),
            ));
        }
    }
    let partition = Partition::iid(data.train.len(), n, config.seed)?;
    let w = averaging_matrix(&assignment.topology);
    let iterations = config
        .iterations_per_epoch
        .unwrap_or_else(|| partition.largest().div_ceil(config.batch_size));

    let mut trace = TrainingTrace {
        records: Vec::new(),
        nodes: n,
        iterations_per_epoch: iterations,
        t_com: assignment.t_com,
        lambda: assignment.lambda,
        tdm_order: layout.tdm_order(),
    };
    let mut models = initialize(&arch, config.seed, n);
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| ChaCha8Rng::seed_from_u64(config.seed ^ i as u64))
        .collect();
    let mut compute_s = 0.0;
    let mut comm_s = 0.0;
    let mut iteration: u64 = 0;
    log_epoch(&mut trace, &arch, &models, data, &partition, 0, compute_s, comm_s);

    for epoch in 1..=config.epochs {
        for _ in 0..iterations {
            let started = Instant::now();
            let gradients: Result<Vec<Vec<f64>>> = models
                .par_iter()
                .zip(rngs.par_iter_mut())
                .enumerate()
                .map(|(i, (model, rng))| {
                    let shard = partition.shard(i);
                    let batch: Vec<usize> = (0..config.batch_size)
                        .map(|_| shard[rand::Rng::random_range(rng, 0..shard.len())])
                        .collect();
                    local_gradient(&arch, model, &data.train, &batch, iteration)
                })
                .collect();
            let step = gradients.and_then(|g| dpsgd_step(&models, &w, &g, config.learning_rate));
            let next = match step {
                Ok(next) => next,
                Err(source) => {
                    return Err(Error::TrainingAborted {
                        partial: Box::new(trace),
                        source: Box::new(source),
                    })
                }
            };
            compute_s += match config.compute {
                ComputeTime::Constant(c) => c,
                ComputeTime::Measured => started.elapsed().as_secs_f64(),
            };
            comm_s += assignment.t_com;
            models = next;
            iteration += 1;
        }
        log_epoch(&mut trace, &arch, &models, data, &partition, epoch, compute_s, comm_s);
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn log_epoch(
    trace: &mut TrainingTrace,
    arch: &Architecture,
    models: &[ModelVector],
    data: &TrainingData,
    partition: &Partition,
    epoch: usize,
    compute_s: f64,
    comm_s: f64,
) {
    let rows: Vec<EpochRecord> = models
        .par_iter()
        .enumerate()
        .map(|(node, model)| {
            let own = evaluate_model(arch, model, &data.train, partition.shard(node));
            let test_accuracy = data.test.as_ref().map(|t| {
                let all: Vec<usize> = (0..t.len()).collect();
                evaluate_model(arch, model, t, &all).accuracy
            });
            EpochRecord {
                epoch,
                node,
                accuracy: own.accuracy,
                loss: own.loss,
                compute_s,
                comm_s,
                total_s: compute_s + comm_s,
                test_accuracy,
            }
        })
        .collect();
    trace.records.extend(rows);
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::consensus::Connectivity;
    use crate::optimizer::RateAssignment;
    use crate::propagation::{build_channel_matrix, RadioParams};

    fn models(rows: &[&[f64]]) -> Vec<ModelVector> {
        rows.iter().map(|r| ModelVector(r.to_vec())).collect()
    }

    #[test]
    fn identity_matrix_decouples_nodes() {
        let x = models(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let next = dpsgd_step(&x, &AveragingMatrix::identity(3), &g, 0.5).unwrap();
        assert_eq!(next, models(&[&[0.5, 2.0], &[3.0, 3.5], &[4.0, 5.0]]));
    }

    #[test]
    fn zero_gradients_give_pure_consensus() {
        let x = models(&[&[1.0], &[4.0]]);
        let w = AveragingMatrix::from_row_stochastic(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75])).unwrap();
        let next = dpsgd_step(&x, &w, &[vec![0.0], vec![0.0]], 0.1).unwrap();
        assert_eq!(next, models(&[&[2.5], &[3.25]]));
    }

    #[test]
    fn uniform_matrix_equalizes_identical_updates() {
        let x = vec![ModelVector(vec![0.3, -0.7]); 4];
        let g = vec![vec![0.1, 0.2]; 4];
        let next = dpsgd_step(&x, &AveragingMatrix::uniform(4), &g, 0.05).unwrap();
        assert!(next.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let x = models(&[&[1.0], &[2.0]]);
        assert!(matches!(
            dpsgd_step(&x, &AveragingMatrix::identity(3), &[vec![0.0], vec![0.0]], 0.1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            dpsgd_step(&x, &AveragingMatrix::identity(2), &[vec![0.0], vec![0.0, 1.0]], 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn initialization_is_shared_and_seeded() {
        let arch = Architecture::new(&ModelSpec::LogisticRegression, Loss::CrossEntropy, 5, 3).unwrap();
        let a = initialize(&arch, 11, 4);
        assert!(a
            .windows(2)
            .all(|p| p[0].0.iter().zip(&p[1].0).all(|(x, y)| x.to_bits() == y.to_bits())));
        assert_eq!(a, initialize(&arch, 11, 4));
        let distinct: std::collections::HashSet<Vec<u64>> = (0..10)
            .map(|seed| initialize(&arch, seed, 1)[0].0.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn time_to_accuracy_interpolates() {
        let rec = |epoch, accuracy, total_s| EpochRecord {
            epoch,
            node: 0,
            accuracy,
            loss: 0.0,
            compute_s: 0.0,
            comm_s: total_s,
            total_s,
            test_accuracy: None,
        };
        let trace = TrainingTrace {
            records: vec![rec(0, 0.1, 0.0), rec(1, 0.6, 10.0), rec(2, 0.9, 20.0)],
            nodes: 1,
            iterations_per_epoch: 1,
            t_com: 10.0,
            lambda: 0.0,
            tdm_order: vec![0],
        };
        assert!((trace.time_to_accuracy(0, 0.8).unwrap() - 50.0 / 3.0).abs() < 1e-12);
        assert_eq!(trace.time_to_accuracy(0, 0.05), Some(0.0));
        assert_eq!(trace.time_to_accuracy(0, 0.95), None);
        assert_eq!(trace.final_accuracy(0), Some(0.9));
    }

    #[test]
    fn single_node_training_is_plain_sgd() {
        let layout = NodeLayout::from_coords(&[(0.0, 0.0)]).unwrap();
        let channels = build_channel_matrix(&layout, &RadioParams::reference(3.0)).unwrap();
        let assignment = RateAssignment {
            rates: vec![1e6],
            topology: Connectivity::identity(1),
            lambda: 0.0,
            t_com: 0.5,
            model_bits: 1.0,
        };
        assert_eq!(channels.len(), 1);
        let gen = GaussianClusters::new(
            SyntheticSpec {
                dim: 4,
                classes: 3,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let data = TrainingData {
            train: gen.sample(30, 3, 0),
            test: None,
        };
        let config = TrainingConfig {
            epochs: 2,
            seed: 5,
            ..Default::default()
        };
        let trace = train(&layout, &assignment, &config, &data).unwrap();

        // Reference: the same chain written directly as SGD.
        let arch = Architecture::for_dataset(&config.model, config.loss, &data.train).unwrap();
        let partition = Partition::iid(30, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = initialize(&arch, 5, 1).pop().unwrap();
        for _ in 0..60 {
            let i = partition.shard(0)[rand::Rng::random_range(&mut rng, 0..30)];
            let g = arch.gradient(&x, &data.train, &[i]);
            for (p, g) in x.0.iter_mut().zip(&g) {
                *p = 1.0 * *p - 0.01 * g;
            }
        }
        let e = evaluate_model(&arch, &x, &data.train, partition.shard(0));
        let last = trace.records.last().unwrap();
        assert_eq!((last.accuracy, last.loss), (e.accuracy, e.loss));
        assert_eq!(trace.iterations_per_epoch, 30);
        assert!((last.comm_s - 30.0).abs() < 1e-9);
        assert!((last.compute_s - 0.06).abs() < 1e-12);
    }
}
