//! Datasets, synthetic generators and IID partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
    /// `Some(k)`: targets are class indices in `0..k`. `None`: real-valued
    /// regression targets.
    classes: Option<usize>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize, classes: Option<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset", "feature dimension must be >= 1"));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::Contract(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                targets.len()
            )));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset", "all values must be finite"));
        }
        if let Some(k) = classes {
            if k < 1 {
                return Err(Error::invalid("dataset", "class count must be >= 1"));
            }
            if let Some(t) = targets.iter().find(|&&t| t < 0.0 || t.fract() != 0.0 || t >= k as f64) {
                return Err(Error::invalid(
                    "dataset",
                    format!("label {t} is not a class index in 0..{k}"),
                ));
            }
        }
        Ok(Dataset {
            features,
            targets,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> Option<usize> {
        self.classes
    }

    /// Width of the model output: one logit per class, or one value for
    /// regression.
    pub fn outputs(&self) -> usize {
        self.classes.unwrap_or(1)
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.targets[i] as usize
    }

    /// Samples `indices` in order, as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            features,
            targets,
            dim: self.dim,
            classes: self.classes,
        }
    }

    /// Reads one sample per row. `label_column` names the target column
    /// when the file has a header, otherwise it is a zero-based index.
    /// Labels are treated as class indices, and the class count is one
    /// more than the largest label.
    pub fn from_csv(path: &Path, label_column: &str, has_header: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let label_index = if has_header {
            let headers = reader.headers()?;
            headers.iter().position(|h| h == label_column).ok_or_else(|| {
                Error::invalid(
                    "dataset",
                    format!("no column named {label_column:?} in {}", path.display()),
                )
            })?
        } else {
            label_column.parse::<usize>().map_err(|_| {
                Error::invalid(
                    "dataset",
                    format!("label column {label_column:?} must be an index for header-less CSV"),
                )
            })?
        };
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut dim = None;
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 1 + usize::from(has_header);
            if label_index >= record.len() {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("row has {} columns, label column is {label_index}", record.len()),
                });
            }
            let width = record.len() - 1;
            if *dim.get_or_insert(width) != width {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("expected {} feature columns, found {width}", dim.unwrap_or(0)),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("column {c}: {field:?} is not a number"),
                })?;
                if c == label_index {
                    targets.push(value);
                } else {
                    features.push(value);
                }
            }
        }
        let dim = dim.ok_or_else(|| Error::invalid("dataset", format!("{} has no samples", path.display())))?;
        let classes = targets.iter().fold(0.0f64, |m, &t| m.max(t)) as usize + 1;
        Dataset::new(features, targets, dim, Some(classes))
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of the class centers around the origin.
    pub separation: f64,
    /// Standard deviation of samples around their class center.
    pub spread: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 20,
            classes: 10,
            separation: 1.0,
            spread: 1.0,
        }
    }
}

/// Class centers drawn once per seed; `train` and `test` draws share them.
#[derive(Clone, Debug)]
pub struct GaussianClusters {
    spec: SyntheticSpec,
    centers: Vec<f64>,
}

impl GaussianClusters {
    pub fn new(spec: SyntheticSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.classes < 2 {
            return Err(Error::invalid("synthetic data", "need dim >= 1 and classes >= 2"));
        }
        if !(spec.separation > 0.0 && spec.spread > 0.0) {
            return Err(Error::invalid("synthetic data", "separation and spread must be > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.separation).expect("positive std");
        let centers = (0..spec.dim * spec.classes).map(|_| normal.sample(&mut rng)).collect();
        Ok(GaussianClusters { spec, centers })
    }

    /// `samples` points with labels cycling through the classes, shuffled.
    /// `stream` separates independent draws (train, test) under one seed.
    pub fn sample(&self, samples: usize, seed: u64, stream: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream + 1);
        let dim = self.spec.dim;
        let normal = Normal::new(0.0, self.spec.spread).expect("positive std");
        let mut labels: Vec<usize> = (0..samples).map(|i| i % self.spec.classes).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(samples * dim);
        for &label in &labels {
            let center = &self.centers[label * dim..(label + 1) * dim];
            features.extend(center.iter().map(|c| c + normal.sample(&mut rng)));
        }
        let targets = labels.iter().map(|&l| l as f64).collect();
        Dataset::new(features, targets, dim, Some(self.spec.classes)).expect("generated data is valid")
    }
}

/// Per-node sample indices over one shared dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    /// Shuffles `0..samples` with `seed` and deals contiguous, near-equal
    /// shards to `nodes` nodes; the first `samples % nodes` shards get one
    /// extra sample.
    pub fn iid(samples: usize, nodes: usize, seed: u64) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::invalid("partition", "need at least one node"));
        }
        if samples < nodes {
            return Err(Error::invalid(
                "partition",
                format!("{samples} samples cannot give every one of {nodes} nodes a sample"),
            ));
        }
        let mut order: Vec<usize> = (0..samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PARTITION_STREAM);
        order.shuffle(&mut rng);
        let base = samples / nodes;
        let extra = samples % nodes;
        let mut shards = Vec::with_capacity(nodes);
        let mut start = 0;
        for i in 0..nodes {
            let len = base + usize::from(i < extra);
            shards.push(order[start..start + len].to_vec());
            start += len;
        }
        Ok(Partition { shards })
    }

    pub fn nodes(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, node: usize) -> &[usize] {
        &self.shards[node]
    }

    pub fn largest(&self) -> usize {
        self.shards.iter().map(Vec::len).max().unwrap_or(0)
    }
}

pub(crate) const PARTITION_STREAM: u64 = 2;
