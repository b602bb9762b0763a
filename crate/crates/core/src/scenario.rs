//! Experiment files, sweeps and result emission.
//!
//! A scenario file is plain text: `[section]` headers followed by
//! `key = value` lines. `#` starts a comment. Lists are comma separated.
//!
//! ```text
//! [layout]
//! preset = reference          # or: coords = 0 0, 50 0, 0 50
//!                             # or: file = nodes.csv  (columns x,y)
//!                             # or: random_nodes = 6, random_side = 200, random_seed = 1
//! [radio]
//! path_loss_index = 5         # required
//! tx_power_dbm = 0
//! bandwidth_hz = 20e6
//! noise_density_dbm_hz = -172
//! fading_margin_bps = 0
//!
//! [optimizer]
//! lambda_target = 0.8         # required unless [sweep] lists targets
//! model_bits = 698880         # default: 32 bits per model parameter
//! allow_isolation = false
//! mutual_links = false
//!
//! [training]
//! learning_rate = 0.01
//! batch_size = 1
//! iterations_per_epoch = 100  # default: one pass over the largest shard
//! epochs = 10
//! seed = 0
//! model = logistic_regression # or: mlp, with hidden = 64, 32
//! loss = cross_entropy        # or: squared_error
//! compute = 0.001             # seconds per iteration, or: measured
//! accuracy_threshold = 0.8
//!
//! [data]
//! source = synthetic          # or: csv, with path, label_column, has_header, test_path
//! samples_per_node = 1000
//! test_samples = 0
//! dim = 20
//! classes = 10
//! separation = 1.0
//! spread = 1.0
//!
//! [sweep]
//! lambda_target = 0.1, 0.3, 0.8
//! epsilon = 3, 4, 5, 6
//!
//! [bound]
//! lipschitz = 1
//! variance = 1
//! learning_rate = 0.01
//! f_initial = 1
//! f_inf = 0
//! iterations = inf
//! node_count = 6
//! lambda_max = 0.99
//! points = 100
//!
//! [output]
//! dir = results
//! ```
//!
//! Relative `file`, `path` and `test_path` entries resolve against the
//! directory of the scenario file; `dir` resolves against the working
//! directory.
//!
//! # Output files
//!
//! | file | header |
//! |------|--------|
//! | `channel_eps<ε>.csv` | `i,j,distance_m,capacity_bps,effective_bps` |
//! | `<cell>/assignment.csv` | `node,rate_bps,reached,lambda,t_com_s` |
//! | `<cell>/trace.csv` | `epoch,node,accuracy,loss,compute_s,comm_s,total_s[,test_accuracy]` |
//! | `summary.csv` | `lambda_target,epsilon,status,lambda,t_com_s,final_accuracy,time_to_threshold_s,min_lambda` |
//! | `bound.csv` | `lambda,total,sync,network` |
//! | `manifest.json` | configuration echo, version, seeds, file list |
//!
//! `<cell>` is `lt<λ_target>_eps<ε>`. `reached` lists node ids separated
//! by `;`. Silent nodes have `rate_bps = inf`. Empty summary fields mean
//! "not applicable" (no trace for an infeasible cell, threshold never
//! reached). CSV bodies depend only on the configuration and seed; the
//! timestamp lives in the manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{lambda_grid, lambda_sweep, BoundParams, Iterations, SweepRow};
use crate::dpsgd::{
    train, Architecture, ComputeTime, Dataset, EpochRecord, GaussianClusters, Loss, ModelSpec, SyntheticSpec,
    TrainingConfig, TrainingData, TrainingTrace,
};
use crate::error::{Error, Result};
use crate::optimizer::{assignment_report, optimize_rates, OptimizerConfig, RateAssignment, ReportRow};
use crate::propagation::{build_channel_matrix, ChannelMatrix, Node, NodeLayout, RadioParams};

const BITS_PER_PARAMETER: f64 = 32.0;
const TEST_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayoutSource {
    Reference,
    Inline,
    File(PathBuf),
    Random { nodes: usize, side: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
        samples_per_node: usize,
        test_samples: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        has_header: bool,
        test_path: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambda_targets: Vec<f64>,
    pub epsilons: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPlan {
    pub params: BoundParams,
    pub lambda_max: f64,
    pub points: usize,
}

impl Default for BoundPlan {
    fn default() -> Self {
        BoundPlan {
            params: BoundParams::default(),
            lambda_max: 0.99,
            points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub layout: NodeLayout,
    pub layout_source: LayoutSource,
    pub radio: RadioParams,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    /// Node-0 training accuracy that defines time-to-accuracy.
    pub accuracy_threshold: f64,
    pub data: DataSource,
    pub sweep: Option<SweepConfig>,
    pub bound: BoundPlan,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    /// `(λ_target, ε)` pairs in row-major order, targets outermost.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        match &self.sweep {
            Some(s) => s
                .lambda_targets
                .iter()
                .flat_map(|&t| s.epsilons.iter().map(move |&e| (t, e)))
                .collect(),
            None => vec![(self.optimizer.lambda_target, self.radio.path_loss_index)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.optimizer.validate()?;
        self.training.validate()?;
        self.bound.params.validate()?;
        if !(0.0..=1.0).contains(&self.accuracy_threshold) {
            return Err(Error::invalid("scenario", "accuracy_threshold must lie in [0, 1]"));
        }
        if let Some(s) = &self.sweep {
            if s.lambda_targets.is_empty() || s.epsilons.is_empty() {
                return Err(Error::invalid("sweep", "lists must not be empty"));
            }
            for &t in &s.lambda_targets {
                OptimizerConfig {
                    lambda_target: t,
                    ..self.optimizer
                }
                .validate()?;
            }
            for &e in &s.epsilons {
                self.radio.with_path_loss_index(e).validate()?;
            }
        }
        Ok(())
    }

    /// Seeds that determine every output, by role.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut seeds = BTreeMap::from([("training".to_string(), self.training.seed)]);
        if let DataSource::Synthetic { seed, .. } = self.data {
            seeds.insert("data".into(), seed);
        }
        if let LayoutSource::Random { seed, .. } = self.layout_source {
            seeds.insert("layout".into(), seed);
        }
        seeds
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

const SECTIONS: [&str; 8] = [
    "layout",
    "radio",
    "optimizer",
    "training",
    "data",
    "sweep",
    "bound",
    "output",
];

struct Raw {
    path: PathBuf,
    sections: BTreeMap<String, Section>,
}

impl Raw {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut raw = Raw {
            path: path.to_path_buf(),
            sections: BTreeMap::new(),
        };
        let mut current: Option<String> = None;
        for (idx, full) in text.lines().enumerate() {
            let line = idx + 1;
            let content = full.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(raw.error(line, format!("unknown section [{name}]")));
                }
                if raw.sections.contains_key(&name) {
                    return Err(raw.error(line, format!("section [{name}] appears twice")));
                }
                raw.sections.insert(
                    name.clone(),
                    Section {
                        line,
                        entries: BTreeMap::new(),
                    },
                );
                current = Some(name);
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(raw.error(line, format!("expected `key = value`, found {content:?}")));
            };
            let Some(section) = current.as_ref() else {
                return Err(raw.error(line, "key outside of any section"));
            };
            let key = key.trim().to_string();
            let entries = &mut raw.sections.get_mut(section).expect("current section exists").entries;
            if entries.contains_key(&key) {
                return Err(raw.error(line, format!("duplicate key {key:?} in [{section}]")));
            }
            entries.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(raw)
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).map_or(0, |s| s.line)
    }

    fn text(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let entry = self.sections.get_mut(section)?.entries.get_mut(key)?;
        entry.used = true;
        Some((entry.value.clone(), entry.line))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.text(section, key) {
            None => Ok(None),
            Some((value, line)) => value
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.error(line, format!("[{section}] {key} = {value:?}: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let line = self.section_line(section);
        self.get(section, key)?
            .ok_or_else(|| self.error(line, format!("missing required key [{section}] {key}")))
    }

    /// Like `get`, with a range check reported at the key's line.
    fn checked<T: FromStr + Copy>(
        &mut self,
        section: &str,
        key: &str,
        default: Option<T>,
        ok: impl Fn(T) -> bool,
        rule: &str,
    ) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let line = self
            .sections
            .get(section)
            .and_then(|s| s.entries.get(key))
            .map(|e| e.line);
        let value = self.get(section, key)?;
        if let (Some(v), Some(line)) = (value, line) {
            if !ok(v) {
                return Err(self.error(line, format!("[{section}] {key} {rule}")));
            }
        }
        Ok(value.or(default))
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((value, line)) = self.text(section, key) else {
            return Ok(None);
        };
        let items = parse_list(&value).map_err(|e| self.error(line, format!("[{section}] {key}: {e}")))?;
        if items.is_empty() {
            return Err(self.error(line, format!("[{section}] {key} must not be empty")));
        }
        Ok(Some(items))
    }

    fn finish(&self) -> Result<()> {
        for (name, section) in &self.sections {
            if let Some((key, entry)) = section.entries.iter().find(|(_, e)| !e.used) {
                return Err(self.error(entry.line, format!("unknown key {key:?} in [{name}]")));
            }
        }
        Ok(())
    }
}

/// Comma-separated floats.
pub fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect()
}

fn parse_coords(text: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    text.split(',')
        .map(|pair| {
            let parts: Vec<&str> = pair.split_whitespace().collect();
            match parts.as_slice() {
                [x, y] => match (x.parse(), y.parse()) {
                    (Ok(x), Ok(y)) => Ok((x, y)),
                    _ => Err(format!("{pair:?} is not a pair of numbers")),
                },
                _ => Err(format!("{pair:?} must be `x y`")),
            }
        })
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Reads a layout CSV with columns `x,y` and an optional `id`.
pub fn read_layout_csv(path: &Path) -> Result<NodeLayout> {
    #[derive(Deserialize)]
    struct Row {
        id: Option<usize>,
        x: f64,
        y: f64,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut nodes = Vec::new();
    for (k, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.into(),
            line: k + 2,
            message: e.to_string(),
        })?;
        nodes.push(Node {
            id: row.id.unwrap_or(k),
            x: row.x,
            y: row.y,
        });
    }
    NodeLayout::from_nodes(nodes)
}

/// Reads and validates a scenario file, applying defaults for every
/// optional key.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(path, &text)
}

/// Parses scenario text; `path` is used for messages and to resolve
/// relative file references.
pub fn parse_scenario(path: &Path, text: &str) -> Result<ScenarioConfig> {
    let mut raw = Raw::parse(path, text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    // [layout]
    if !raw.has_section("layout") {
        return Err(raw.error(0, "missing section [layout]"));
    }
    let preset: Option<String> = raw.get("layout", "preset")?;
    let coords = raw.text("layout", "coords");
    let file = raw.text("layout", "file");
    let random: Option<usize> = raw.get("layout", "random_nodes")?;
    let side = raw.checked("layout", "random_side", Some(200.0), |v: f64| v > 0.0, "must be > 0")?;
    let layout_seed: u64 = raw.or("layout", "random_seed", 0)?;
    let sources = [preset.is_some(), coords.is_some(), file.is_some(), random.is_some()];
    let line = raw.section_line("layout");
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(raw.error(line, "[layout] needs exactly one of preset, coords, file, random_nodes"));
    }
    let (layout, layout_source) = if let Some(p) = preset {
        if p != "reference" {
            return Err(raw.error(line, format!("unknown layout preset {p:?}")));
        }
        (NodeLayout::six_node_reference(), LayoutSource::Reference)
    } else if let Some((text, line)) = coords {
        let pts = parse_coords(&text).map_err(|e| raw.error(line, format!("[layout] coords: {e}")))?;
        let layout = NodeLayout::from_coords(&pts).map_err(|e| raw.error(line, e.to_string()))?;
        (layout, LayoutSource::Inline)
    } else if let Some((name, line)) = file {
        let p = resolve(&base, &name);
        if !p.is_file() {
            return Err(raw.error(line, format!("layout file {} does not exist", p.display())));
        }
        (read_layout_csv(&p)?, LayoutSource::File(p))
    } else {
        let nodes = random.expect("one source is set");
        let side = side.expect("has default");
        let layout = NodeLayout::random(nodes, side, layout_seed).map_err(|e| raw.error(line, e.to_string()))?;
        (
            layout,
            LayoutSource::Random {
                nodes,
                side,
                seed: layout_seed,
            },
        )
    };

    // [radio]
    let reference = RadioParams::reference(1.0);
    let eps = raw.checked("radio", "path_loss_index", None, |v: f64| v > 0.0, "must be > 0")?;
    let has_eps_sweep = raw
        .sections
        .get("sweep")
        .is_some_and(|s| s.entries.contains_key("epsilon"));
    let eps = match (eps, has_eps_sweep) {
        (Some(e), _) => e,
        (None, true) => f64::NAN,
        (None, false) => {
            let line = raw.section_line("radio");
            return Err(raw.error(line, "missing required key [radio] path_loss_index"));
        }
    };
    let radio = RadioParams {
        tx_power_dbm: raw.or("radio", "tx_power_dbm", reference.tx_power_dbm)?,
        bandwidth_hz: raw
            .checked(
                "radio",
                "bandwidth_hz",
                Some(reference.bandwidth_hz),
                |v: f64| v > 0.0,
                "must be > 0",
            )?
            .expect("has default"),
        noise_density_dbm_hz: raw.or("radio", "noise_density_dbm_hz", reference.noise_density_dbm_hz)?,
        path_loss_index: eps,
        fading_margin_bps: raw
            .checked(
                "radio",
                "fading_margin_bps",
                Some(0.0),
                |v: f64| v >= 0.0,
                "must be >= 0",
            )?
            .expect("has default"),
    };

    // [sweep]
    let sweep_targets = raw.list("sweep", "lambda_target")?;
    let sweep_eps = raw.list("sweep", "epsilon")?;

    // [training]
    let model = match raw.get::<String>("training", "model")?.as_deref() {
        None | Some("logistic_regression") => {
            if let Some((_, line)) = raw.text("training", "hidden") {
                return Err(raw.error(line, "[training] hidden only applies to model = mlp"));
            }
            ModelSpec::LogisticRegression
        }
        Some("mlp") => {
            let line = raw.section_line("training");
            let hidden = raw
                .list("training", "hidden")?
                .ok_or_else(|| raw.error(line, "missing required key [training] hidden for model = mlp"))?;
            if hidden.iter().any(|&h| h < 1.0 || h.fract() != 0.0) {
                return Err(raw.error(line, "[training] hidden widths must be positive integers"));
            }
            ModelSpec::Mlp(hidden.iter().map(|&h| h as usize).collect())
        }
        Some(other) => {
            let line = raw.section_line("training");
            return Err(raw.error(line, format!("unknown model {other:?}")));
        }
    };
    let loss = match raw.get::<String>("training", "loss")?.as_deref() {
        None | Some("cross_entropy") => Loss::CrossEntropy,
        Some("squared_error") => Loss::SquaredError,
        Some(other) => {
            let line = raw.section_line("training");
            return Err(raw.error(line, format!("unknown loss {other:?}")));
        }
    };
    let defaults = TrainingConfig::default();
    let compute = match raw.text("training", "compute") {
        None => defaults.compute,
        Some((v, _)) if v == "measured" => ComputeTime::Measured,
        Some((v, line)) => match v.parse::<f64>() {
            Ok(c) if c >= 0.0 && c.is_finite() => ComputeTime::Constant(c),
            _ => return Err(raw.error(line, "[training] compute must be seconds >= 0 or `measured`")),
        },
    };
    let training = TrainingConfig {
        learning_rate: raw
            .checked(
                "training",
                "learning_rate",
                Some(defaults.learning_rate),
                |v: f64| v > 0.0,
                "must be > 0",
            )?
            .expect("has default"),
        batch_size: raw
            .checked("training", "batch_size", Some(1), |v: usize| v >= 1, "must be >= 1")?
            .expect("has default"),
        iterations_per_epoch: raw.checked(
            "training",
            "iterations_per_epoch",
            None,
            |v: usize| v >= 1,
            "must be >= 1",
        )?,
        epochs: raw
            .checked(
                "training",
                "epochs",
                Some(defaults.epochs),
                |v: usize| v >= 1,
                "must be >= 1",
            )?
            .expect("has default"),
        seed: raw.or("training", "seed", defaults.seed)?,
        model,
        loss,
        compute,
    };
    let accuracy_threshold = raw
        .checked(
            "training",
            "accuracy_threshold",
            Some(0.8),
            |v: f64| (0.0..=1.0).contains(&v),
            "must lie in [0, 1]",
        )?
        .expect("has default");

    // [data]
    let data = match raw.get::<String>("data", "source")?.as_deref() {
        None | Some("synthetic") => {
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                dim: raw
                    .checked("data", "dim", Some(d.dim), |v: usize| v >= 1, "must be >= 1")?
                    .expect("default"),
                classes: raw
                    .checked("data", "classes", Some(d.classes), |v: usize| v >= 2, "must be >= 2")?
                    .expect("default"),
                separation: raw
                    .checked(
                        "data",
                        "separation",
                        Some(d.separation),
                        |v: f64| v > 0.0,
                        "must be > 0",
                    )?
                    .expect("default"),
                spread: raw
                    .checked("data", "spread", Some(d.spread), |v: f64| v > 0.0, "must be > 0")?
                    .expect("default"),
            };
            DataSource::Synthetic {
                spec,
                samples_per_node: raw
                    .checked(
                        "data",
                        "samples_per_node",
                        Some(1000),
                        |v: usize| v >= 1,
                        "must be >= 1",
                    )?
                    .expect("default"),
                test_samples: raw.or("data", "test_samples", 0)?,
                seed: raw.or("data", "seed", training.seed)?,
            }
        }
        Some("csv") => {
            let line = raw.section_line("data");
            let (name, name_line) = raw
                .text("data", "path")
                .ok_or_else(|| raw.error(line, "missing required key [data] path"))?;
            let path = resolve(&base, &name);
            if !path.is_file() {
                return Err(raw.error(name_line, format!("data file {} does not exist", path.display())));
            }
            let test_path = match raw.text("data", "test_path") {
                None => None,
                Some((name, line)) => {
                    let p = resolve(&base, &name);
                    if !p.is_file() {
                        return Err(raw.error(line, format!("data file {} does not exist", p.display())));
                    }
                    Some(p)
                }
            };
            DataSource::Csv {
                path,
                label_column: raw.require("data", "label_column")?,
                has_header: raw.or("data", "has_header", true)?,
                test_path,
            }
        }
        Some(other) => {
            let line = raw.section_line("data");
            return Err(raw.error(line, format!("unknown data source {other:?}")));
        }
    };

    // [optimizer]
    let lambda_target = match (raw.get::<f64>("optimizer", "lambda_target")?, &sweep_targets) {
        (Some(t), _) => t,
        (None, Some(_)) => f64::NAN,
        (None, None) => {
            let line = raw.section_line("optimizer");
            return Err(raw.error(line, "missing required key [optimizer] lambda_target"));
        }
    };
    let model_bits = raw.checked(
        "optimizer",
        "model_bits",
        None,
        |v: f64| v > 0.0 && v.is_finite(),
        "must be > 0",
    )?;
    let model_bits = match model_bits {
        Some(m) => m,
        None => {
            let (inputs, outputs) = data_shape(&data)?;
            Architecture::new(&training.model, training.loss, inputs, outputs)?.parameter_count() as f64
                * BITS_PER_PARAMETER
        }
    };
    let optimizer = OptimizerConfig {
        lambda_target,
        model_bits,
        allow_isolation: raw.or("optimizer", "allow_isolation", false)?,
        mutual_links: raw.or("optimizer", "mutual_links", false)?,
    };

    // [bound]
    let bd = BoundPlan::default();
    let iterations = match raw.text("bound", "iterations") {
        None => bd.params.iterations,
        Some((v, _)) if v == "inf" => Iterations::Infinite,
        Some((v, line)) => match v.parse::<u64>() {
            Ok(k) if k >= 1 => Iterations::Finite(k),
            _ => return Err(raw.error(line, "[bound] iterations must be a positive integer or `inf`")),
        },
    };
    let bound = BoundPlan {
        params: BoundParams {
            lipschitz: raw.or("bound", "lipschitz", bd.params.lipschitz)?,
            variance: raw.or("bound", "variance", bd.params.variance)?,
            beta: raw.or("bound", "beta", bd.params.beta)?,
            learning_rate: raw.or("bound", "learning_rate", bd.params.learning_rate)?,
            f_initial: raw.or("bound", "f_initial", bd.params.f_initial)?,
            f_inf: raw.or("bound", "f_inf", bd.params.f_inf)?,
            iterations,
            node_count: raw.or("bound", "node_count", bd.params.node_count)?,
        },
        lambda_max: raw.or("bound", "lambda_max", bd.lambda_max)?,
        points: raw.or("bound", "points", bd.points)?,
    };

    let output_dir = PathBuf::from(raw.or::<String>("output", "dir", "results".into())?);
    raw.finish()?;

    let sweep = match (sweep_targets, sweep_eps) {
        (None, None) => None,
        (t, e) => Some(SweepConfig {
            lambda_targets: t.unwrap_or(vec![lambda_target]),
            epsilons: e.unwrap_or(vec![eps]),
        }),
    };
    // Keep a well-defined scalar when only the sweep names the value.
    let radio = if radio.path_loss_index.is_nan() {
        radio.with_path_loss_index(sweep.as_ref().expect("sweep present").epsilons[0])
    } else {
        radio
    };
    let optimizer = if optimizer.lambda_target.is_nan() {
        OptimizerConfig {
            lambda_target: sweep.as_ref().expect("sweep present").lambda_targets[0],
            ..optimizer
        }
    } else {
        optimizer
    };

    let config = ScenarioConfig {
        layout,
        layout_source,
        radio,
        optimizer,
        training,
        accuracy_threshold,
        data,
        sweep,
        bound,
        output_dir,
    };
    config.validate().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(config)
}

fn data_shape(data: &DataSource) -> Result<(usize, usize)> {
    match data {
        DataSource::Synthetic { spec, .. } => Ok((spec.dim, spec.classes)),
        DataSource::Csv {
            path,
            label_column,
            has_header,
            ..
        } => {
            let d = Dataset::from_csv(path, label_column, *has_header)?;
            Ok((d.dim(), d.outputs()))
        }
    }
}

/// Materializes the training and test data of a scenario.
pub fn load_data(config: &ScenarioConfig) -> Result<TrainingData> {
    match &config.data {
        DataSource::Synthetic {
            spec,
            samples_per_node,
            test_samples,
            seed,
        } => {
            let clusters = GaussianClusters::new(*spec, *seed)?;
            let train = clusters.sample(samples_per_node * config.layout.len(), *seed, 0);
            let test = (*test_samples > 0).then(|| clusters.sample(*test_samples, *seed, TEST_STREAM));
            Ok(TrainingData { train, test })
        }
        DataSource::Csv {
            path,
            label_column,
            has_header,
            test_path,
        } => {
            let train = Dataset::from_csv(path, label_column, *has_header)?;
            let test = test_path
                .as_ref()
                .map(|p| Dataset::from_csv(p, label_column, *has_header))
                .transpose()?;
            Ok(TrainingData { train, test })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv_reader(path)?;
    reader
        .deserialize()
        .enumerate()
        .map(|(k, row)| {
            row.map_err(|e| Error::Parse {
                path: path.into(),
                line: k + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One off-diagonal entry of a channel matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub i: usize,
    pub j: usize,
    pub distance_m: f64,
    pub capacity_bps: f64,
    pub effective_bps: f64,
}

pub fn channel_rows(layout: &NodeLayout, channels: &ChannelMatrix) -> Vec<ChannelRow> {
    let n = layout.len();
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| ChannelRow {
            i,
            j,
            distance_m: layout.distance(i, j),
            capacity_bps: channels.capacity(i, j),
            effective_bps: channels.effective(i, j),
        })
        .collect()
}

/// Writes the capacity matrix of `layout` under `params`.
pub fn emit_channel(layout: &NodeLayout, params: &RadioParams, path: &Path) -> Result<ChannelMatrix> {
    let channels = build_channel_matrix(layout, params)?;
    write_rows(path, &channel_rows(layout, &channels))?;
    Ok(channels)
}

pub fn read_channel_csv(path: &Path) -> Result<Vec<ChannelRow>> {
    read_rows(path)
}

#[derive(Serialize, Deserialize)]
struct AssignmentRow {
    node: usize,
    rate_bps: f64,
    reached: String,
    lambda: f64,
    t_com_s: f64,
}

pub fn write_assignment_csv(path: &Path, assignment: &RateAssignment) -> Result<()> {
    let rows: Vec<AssignmentRow> = assignment_report(assignment)
        .into_iter()
        .map(|r| AssignmentRow {
            node: r.node,
            rate_bps: r.rate_bps,
            reached: r.reached.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            lambda: r.lambda,
            t_com_s: r.t_com_s,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn read_assignment_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let rows: Vec<AssignmentRow> = read_rows(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            let reached = r
                .reached
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: k + 2,
                    message: format!("reached: {e}"),
                })?;
            Ok(ReportRow {
                node: r.node,
                rate_bps: r.rate_bps,
                reached,
                lambda: r.lambda,
                t_com_s: r.t_com_s,
            })
        })
        .collect()
}

/// Writes a trace; the `test_accuracy` column appears only when the trace
/// has held-out accuracies.
pub fn write_trace_csv(path: &Path, trace: &TrainingTrace) -> Result<()> {
    let with_test = trace.records.iter().any(|r| r.test_accuracy.is_some());
    let mut w = csv_writer(path)?;
    let mut header = vec!["epoch", "node", "accuracy", "loss", "compute_s", "comm_s", "total_s"];
    if with_test {
        header.push("test_accuracy");
    }
    w.write_record(&header)?;
    for r in &trace.records {
        let mut fields = vec![
            r.epoch.to_string(),
            r.node.to_string(),
            r.accuracy.to_string(),
            r.loss.to_string(),
            r.compute_s.to_string(),
            r.comm_s.to_string(),
            r.total_s.to_string(),
        ];
        if with_test {
            fields.push(r.test_accuracy.map(|a| a.to_string()).unwrap_or_default());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    /// Rates found (and training finished, when requested).
    Ok,
    /// No rate assignment meets the target.
    Infeasible,
    /// Training stopped on a numerical failure; the trace is partial.
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda_target: f64,
    pub epsilon: f64,
    pub status: CellStatus,
    pub lambda: Option<f64>,
    pub t_com_s: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub time_to_threshold_s: Option<f64>,
    pub min_lambda: Option<f64>,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

pub fn read_bound_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

/// Writes the bound at each λ, in input order.
pub fn emit_bound_sweep(params: &BoundParams, lambdas: &[f64], path: &Path) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("bound sweep", "the lambda list is empty"));
    }
    let rows = lambda_sweep(params, lambdas)?;
    write_rows(path, &rows)?;
    Ok(rows)
}

/// Writes `bound.csv` for the `[bound]` section of a scenario.
pub fn emit_bound_plan(plan: &BoundPlan, path: &Path) -> Result<Vec<SweepRow>> {
    emit_bound_sweep(&plan.params, &lambda_grid(plan.lambda_max, plan.points)?, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix_s: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: Option<&ScenarioConfig>, files: Vec<String>) -> Result<Self> {
        let created_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_s,
            seeds: config.map(ScenarioConfig::seeds).unwrap_or_default(),
            config: config
                .map(serde_json::to_value)
                .transpose()?
                .unwrap_or(serde_json::Value::Null),
            files,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// How far a plan goes for each cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Rate assignment only.
    Rates,
    /// Rate assignment and training.
    Full,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub lambda_target: f64,
    pub epsilon: f64,
    /// Directory of the cell's files, relative to the output directory.
    pub dir: PathBuf,
    pub assignment: Option<RateAssignment>,
    pub trace: Option<TrainingTrace>,
    pub summary: SummaryRow,
}

#[derive(Clone, Debug)]
pub struct PlanReport {
    pub cells: Vec<CellOutcome>,
    /// Every file written, relative to the output directory.
    pub files: Vec<String>,
}

pub fn cell_name(lambda_target: f64, epsilon: f64) -> String {
    format!("lt{lambda_target}_eps{epsilon}")
}

/// Optimizes and trains every cell.
pub fn run_plan(config: &ScenarioConfig) -> Result<PlanReport> {
    run_plan_stage(config, Stage::Full, "run")
}

/// Runs every `(λ_target, ε)` cell, in parallel, and writes per-cell files,
/// `summary.csv` and `manifest.json` under `config.output_dir`. An
/// infeasible target is recorded in the summary and does not stop the
/// other cells.
pub fn run_plan_stage(config: &ScenarioConfig, stage: Stage, command: &str) -> Result<PlanReport> {
    config.validate()?;
    let out = &config.output_dir;
    let data = match stage {
        Stage::Full => Some(load_data(config)?),
        Stage::Rates => None,
    };
    let cells: Vec<CellOutcome> = config
        .cells()
        .into_par_iter()
        .map(|(target, eps)| run_cell(config, data.as_ref(), target, eps))
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    for cell in &cells {
        if cell.assignment.is_some() {
            files.push(format!("{}/assignment.csv", cell.dir.display()));
        }
        if cell.trace.is_some() {
            files.push(format!("{}/trace.csv", cell.dir.display()));
        }
    }
    let rows: Vec<SummaryRow> = cells.iter().map(|c| c.summary.clone()).collect();
    write_summary_csv(&out.join("summary.csv"), &rows)?;
    files.push("summary.csv".into());
    Manifest::new(command, Some(config), files.clone())?.write(out)?;
    Ok(PlanReport { cells, files })
}

fn run_cell(config: &ScenarioConfig, data: Option<&TrainingData>, target: f64, eps: f64) -> Result<CellOutcome> {
    let dir = PathBuf::from(cell_name(target, eps));
    let cell_dir = config.output_dir.join(&dir);
    let channels = build_channel_matrix(&config.layout, &config.radio.with_path_loss_index(eps))?;
    let opt = OptimizerConfig {
        lambda_target: target,
        ..config.optimizer
    };
    let mut summary = SummaryRow {
        lambda_target: target,
        epsilon: eps,
        status: CellStatus::Ok,
        lambda: None,
        t_com_s: None,
        final_accuracy: None,
        time_to_threshold_s: None,
        min_lambda: None,
    };
    let assignment = match optimize_rates(&channels, &opt) {
        Ok(a) => a,
        Err(Error::Infeasible { min_lambda, .. }) => {
            summary.status = CellStatus::Infeasible;
            summary.min_lambda = Some(min_lambda);
            return Ok(CellOutcome {
                lambda_target: target,
                epsilon: eps,
                dir,
                assignment: None,
                trace: None,
                summary,
            });
        }
        Err(e) => return Err(e),
    };
    write_assignment_csv(&cell_dir.join("assignment.csv"), &assignment)?;
    summary.lambda = Some(assignment.lambda);
    summary.t_com_s = Some(assignment.t_com);

    let trace = match data {
        None => None,
        Some(data) => {
            let trace = match train(&config.layout, &assignment, &config.training, data) {
                Ok(t) => t,
                Err(Error::TrainingAborted { partial, .. }) => {
                    summary.status = CellStatus::Aborted;
                    *partial
                }
                Err(e) => return Err(e),
            };
            write_trace_csv(&cell_dir.join("trace.csv"), &trace)?;
            summary.final_accuracy = trace.final_accuracy(0);
            summary.time_to_threshold_s = trace.time_to_accuracy(0, config.accuracy_threshold);
            Some(trace)
        }
    };
    Ok(CellOutcome {
        lambda_target: target,
        epsilon: eps,
        dir,
        assignment: Some(assignment),
        trace,
        summary,
    })
}
