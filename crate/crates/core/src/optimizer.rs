//! Transmission-rate selection.
//!
//! Every node picks one broadcast rate from the effective capacities of its
//! row of the channel matrix. A choice determines the connectivity, hence
//! `W` and λ, and the TDM round time `t_com = M·Σ 1/R_i`. The optimizer
//! returns the combination with the smallest `t_com` among those with
//! `λ ≤ λ_target`.
//!
//! The search is exhaustive over the `Π |candidates_i|` combinations. It is
//! a depth-first walk over nodes in id order, trying each node's candidates
//! from the highest rate down, and prunes a branch as soon as a lower bound
//! on its `t_com` exceeds the incumbent. Ties on `t_com` go to the
//! lexicographically smallest tuple of candidate indices, so every node that
//! runs the search on the same inputs reaches the same answer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{averaging_matrix_for_rates, spectral_lambda, Connectivity};
use crate::error::{Error, Result};
use crate::propagation::ChannelMatrix;

/// Slack allowed on `λ ≤ λ_target`; absorbs eigensolver round-off (a
/// complete graph evaluates to λ ≈ 1e-16, not 0).
pub const LAMBDA_TOLERANCE: f64 = 1e-9;

/// Relative slack on the pruning bound. The bound and the leaf value are
/// summed in different orders, so they can differ in the last bits.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lambda_target: f64,
    /// Model size M in bits.
    pub model_bits: f64,
    /// Adds a "reach nobody" option (infinite rate, no airtime) per node.
    pub allow_isolation: bool,
    /// Evaluate λ on the mutual-link subgraph.
    pub mutual_links: bool,
}

impl OptimizerConfig {
    pub fn new(lambda_target: f64, model_bits: f64) -> Self {
        OptimizerConfig {
            lambda_target,
            model_bits,
            allow_isolation: false,
            mutual_links: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_target) {
            return Err(Error::invalid(
                "optimizer config",
                format!("lambda_target must lie in [0, 1), got {}", self.lambda_target),
            ));
        }
        if !(self.model_bits > 0.0 && self.model_bits.is_finite()) {
            return Err(Error::invalid("optimizer config", "model_bits must be > 0"));
        }
        Ok(())
    }
}

/// Per-node broadcast rates together with what they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct RateAssignment {
    /// Bit/s per node; `INFINITY` marks a node that does not broadcast.
    pub rates: Vec<f64>,
    pub topology: Connectivity,
    pub lambda: f64,
    /// Seconds per sharing round.
    pub t_com: f64,
    pub model_bits: f64,
}

impl RateAssignment {
    /// Recomputes topology, λ and `t_com` from rates.
    pub fn evaluate(channels: &ChannelMatrix, rates: Vec<f64>, model_bits: f64, mutual_links: bool) -> Result<Self> {
        let t_com = communication_time(&rates, model_bits)?;
        let (topology, w) = averaging_matrix_for_rates(channels, &rates, mutual_links)?;
        let lambda = spectral_lambda(&w)?;
        Ok(RateAssignment {
            rates,
            topology,
            lambda,
            t_com,
            model_bits,
        })
    }
}

/// `M·Σ 1/R_i`. Infinite rates (silent nodes) cost nothing.
pub fn communication_time(rates: &[f64], model_bits: f64) -> Result<f64> {
    if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| r.is_nan() || **r <= 0.0) {
        return Err(Error::Domain(format!("rate of node {i} must be positive, got {r}")));
    }
    let inverse: f64 = rates.iter().map(|r| 1.0 / r).sum();
    Ok(model_bits * inverse)
}

/// Usable rates for `node`: the positive effective capacities towards the
/// other nodes, deduplicated, highest first. Picking entry `k` reaches
/// exactly the nodes whose capacity is at least that value.
pub fn candidate_rates(channels: &ChannelMatrix, node: usize) -> Vec<f64> {
    let mut rates: Vec<f64> = (0..channels.len())
        .filter(|&j| j != node)
        .map(|j| channels.effective(node, j))
        .filter(|&c| c > 0.0)
        .collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    rates.dedup();
    rates
}

fn candidate_table(channels: &ChannelMatrix, allow_isolation: bool) -> Result<Vec<Vec<f64>>> {
    (0..channels.len())
        .map(|i| {
            let mut c = candidate_rates(channels, i);
            if allow_isolation {
                c.insert(0, f64::INFINITY);
            }
            if c.is_empty() {
                return Err(Error::Contract(format!(
                    "node {i} has no usable link and isolation is not allowed"
                )));
            }
            Ok(c)
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Best {
    t_com: f64,
    indices: Vec<usize>,
}

impl Best {
    fn beaten_by(best: &Option<Best>, t_com: f64, indices: &[usize]) -> bool {
        match best {
            None => true,
            Some(b) => t_com < b.t_com || (t_com == b.t_com && indices < b.indices.as_slice()),
        }
    }
}

struct Search<'a> {
    channels: &'a ChannelMatrix,
    config: &'a OptimizerConfig,
    candidates: &'a [Vec<f64>],
    /// `suffix[k] = Σ_{i ≥ k} 1 / max(candidates_i)`.
    suffix: Vec<f64>,
    indices: Vec<usize>,
    rates: Vec<f64>,
    best: Option<Best>,
}

impl<'a> Search<'a> {
    fn new(
        channels: &'a ChannelMatrix,
        config: &'a OptimizerConfig,
        candidates: &'a [Vec<f64>],
        best: Option<Best>,
    ) -> Self {
        let n = candidates.len();
        let mut suffix = vec![0.0; n + 1];
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] + 1.0 / candidates[k][0];
        }
        Search {
            channels,
            config,
            candidates,
            suffix,
            indices: vec![0; n],
            rates: vec![0.0; n],
            best,
        }
    }

    fn prunable(&self, depth: usize, partial: f64) -> bool {
        match &self.best {
            None => false,
            Some(b) => {
                let lower = self.config.model_bits * (partial + self.suffix[depth]);
                lower > b.t_com * (1.0 + PRUNE_SLACK)
            }
        }
    }

    fn descend(&mut self, depth: usize, partial: f64) -> Result<()> {
        if depth == self.candidates.len() {
            return self.leaf(partial);
        }
        for k in 0..self.candidates[depth].len() {
            let rate = self.candidates[depth][k];
            let next = partial + 1.0 / rate;
            // Candidates are sorted by decreasing rate, so the bound only
            // grows along this loop.
            if self.prunable(depth + 1, next) {
                break;
            }
            self.indices[depth] = k;
            self.rates[depth] = rate;
            self.descend(depth + 1, next)?;
        }
        Ok(())
    }

    fn leaf(&mut self, inverse_sum: f64) -> Result<()> {
        let t_com = self.config.model_bits * inverse_sum;
        if !Best::beaten_by(&self.best, t_com, &self.indices) {
            return Ok(());
        }
        if self.feasible(&self.rates)? {
            self.best = Some(Best {
                t_com,
                indices: self.indices.clone(),
            });
        }
        Ok(())
    }

    fn feasible(&self, rates: &[f64]) -> Result<bool> {
        let (_, w) = averaging_matrix_for_rates(self.channels, rates, self.config.mutual_links)?;
        debug_assert!(w.max_row_sum_error() <= crate::consensus::ROW_SUM_TOLERANCE);
        Ok(spectral_lambda(&w)? <= self.config.lambda_target + LAMBDA_TOLERANCE)
    }
}

fn rates_for(candidates: &[Vec<f64>], indices: &[usize]) -> Vec<f64> {
    indices.iter().zip(candidates).map(|(&k, c)| c[k]).collect()
}

/// Feasible incumbent from the densest choice (lowest rate everywhere), if
/// it meets the target.
fn seed_incumbent(channels: &ChannelMatrix, config: &OptimizerConfig, candidates: &[Vec<f64>]) -> Result<Option<Best>> {
    let indices: Vec<usize> = candidates.iter().map(|c| c.len() - 1).collect();
    let rates = rates_for(candidates, &indices);
    let search = Search::new(channels, config, candidates, None);
    if search.feasible(&rates)? {
        let inverse: f64 = rates.iter().map(|r| 1.0 / r).sum();
        Ok(Some(Best {
            t_com: config.model_bits * inverse,
            indices,
        }))
    } else {
        Ok(None)
    }
}

fn finish(
    channels: &ChannelMatrix,
    config: &OptimizerConfig,
    candidates: &[Vec<f64>],
    best: Option<Best>,
) -> Result<RateAssignment> {
    match best {
        Some(b) => {
            let rates = rates_for(candidates, &b.indices);
            RateAssignment::evaluate(channels, rates, config.model_bits, config.mutual_links)
        }
        None => Err(Error::Infeasible {
            target: config.lambda_target,
            min_lambda: min_achievable_lambda(channels, config, candidates)?,
        }),
    }
}

/// Rates minimizing `t_com` subject to `λ ≤ λ_target`.
pub fn optimize_rates(channels: &ChannelMatrix, config: &OptimizerConfig) -> Result<RateAssignment> {
    config.validate()?;
    let candidates = candidate_table(channels, config.allow_isolation)?;
    let seed = seed_incumbent(channels, config, &candidates)?;
    let mut search = Search::new(channels, config, &candidates, seed);
    search.descend(0, 0.0)?;
    let best = search.best;
    finish(channels, config, &candidates, best)
}

/// Same result as [`optimize_rates`], with the first node's candidate
/// branches searched on the rayon pool.
pub fn optimize_rates_parallel(channels: &ChannelMatrix, config: &OptimizerConfig) -> Result<RateAssignment> {
    config.validate()?;
    let candidates = candidate_table(channels, config.allow_isolation)?;
    let seed = seed_incumbent(channels, config, &candidates)?;
    let branches: Vec<Option<Best>> = (0..candidates[0].len())
        .into_par_iter()
        .map(|k| {
            let mut search = Search::new(channels, config, &candidates, seed.clone());
            let rate = candidates[0][k];
            let partial = 1.0 / rate;
            if search.prunable(1, partial) {
                return Ok(search.best);
            }
            search.indices[0] = k;
            search.rates[0] = rate;
            search.descend(1, partial)?;
            Ok(search.best)
        })
        .collect::<Result<_>>()?;
    let best = branches.into_iter().flatten().fold(None, |acc: Option<Best>, b| {
        if Best::beaten_by(&acc, b.t_com, &b.indices) {
            Some(b)
        } else {
            acc
        }
    });
    finish(channels, config, &candidates, best)
}

fn min_achievable_lambda(channels: &ChannelMatrix, config: &OptimizerConfig, candidates: &[Vec<f64>]) -> Result<f64> {
    let n = candidates.len();
    let mut indices = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let rates = rates_for(candidates, &indices);
        let (_, w) = averaging_matrix_for_rates(channels, &rates, config.mutual_links)?;
        best = best.min(spectral_lambda(&w)?);
        // odometer over candidate indices
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            indices[k] += 1;
            if indices[k] < candidates[k].len() {
                break;
            }
            indices[k] = 0;
        }
    }
}

/// One row of an assignment report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub node: usize,
    /// Bit/s; infinite for a silent node.
    pub rate_bps: f64,
    /// Nodes other than `node` receiving its broadcast.
    pub reached: Vec<usize>,
    pub lambda: f64,
    pub t_com_s: f64,
}

pub fn assignment_report(assignment: &RateAssignment) -> Vec<ReportRow> {
    let topo = &assignment.topology;
    (0..topo.len())
        .map(|i| ReportRow {
            node: i,
            rate_bps: assignment.rates[i],
            reached: (0..topo.len()).filter(|&j| j != i && topo.get(i, j)).collect(),
            lambda: assignment.lambda,
            t_com_s: assignment.t_com,
        })
        .collect()
}
