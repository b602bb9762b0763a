#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use ndc_dpsgd::consensus::{spectral_lambda, AveragingMatrix, Connectivity};
use ndc_dpsgd::dpsgd::{Architecture, Dataset, ModelVector};
use ndc_dpsgd::propagation::ChannelMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Result of the plain enumerator: rates, `t_com`, λ.
#[derive(Debug, PartialEq)]
pub struct Enumerated {
    pub rates: Vec<f64>,
    pub t_com: f64,
    pub lambda: f64,
}

/// Tries every rate tuple in lexicographic order of candidate indices and
/// keeps the first one with the smallest `t_com` among those meeting the
/// target. Shares nothing with the optimizer but the eigenvalue routine.
pub fn enumerate_rates(channels: &ChannelMatrix, lambda_target: f64, model_bits: f64) -> Option<Enumerated> {
    let n = channels.len();
    let candidates: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut c: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| channels.effective(i, j))
                .filter(|&c| c > 0.0)
                .collect();
            c.sort_by(|a, b| b.partial_cmp(a).unwrap());
            c.dedup();
            c
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return None;
    }
    let mut best: Option<Enumerated> = None;
    let mut idx = vec![0usize; n];
    loop {
        let rates: Vec<f64> = idx.iter().zip(&candidates).map(|(&k, c)| c[k]).collect();
        let t_com = model_bits * rates.iter().map(|r| 1.0 / r).sum::<f64>();
        if best.as_ref().is_none_or(|b| t_com < b.t_com) {
            let lambda = lambda_of(&plain_w(channels, &rates));
            if lambda <= lambda_target + 1e-9 {
                best = Some(Enumerated { rates, t_com, lambda });
            }
        }
        // Odometer, last node fastest.
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < candidates[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Row i of `A` marks the nodes that can decode node i's broadcast.
pub fn plain_w(channels: &ChannelMatrix, rates: &[f64]) -> DMatrix<f64> {
    let n = channels.len();
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j || channels.effective(i, j) >= rates[i] {
            1.0
        } else {
            0.0
        }
    });
    let mut w = a.clone();
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        for j in 0..n {
            w[(i, j)] = a[(i, j)] / s;
        }
    }
    w
}

pub fn lambda_of(w: &DMatrix<f64>) -> f64 {
    spectral_lambda(&AveragingMatrix::from_row_stochastic(w.clone()).unwrap()).unwrap()
}

/// Regular graph: a circulant with a symmetric offset set, then relabeled
/// by a random permutation. Row-normalizing a regular graph gives a
/// symmetric `W`.
pub fn random_regular(n: usize, rng: &mut impl Rng) -> Connectivity {
    let mut offsets: Vec<usize> = (1..=n / 2).filter(|_| rng.random_bool(0.5)).collect();
    if offsets.is_empty() {
        offsets.push(1);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = Connectivity::from_fn(n, |i, j| {
        let d = (i + n - j) % n;
        offsets.iter().any(|&s| d == s || d == (n - s) % n)
    });
    base.permuted(&perm)
}

/// Central differences of `batch_loss` on one sample.
pub fn numeric_gradient(arch: &Architecture, params: &ModelVector, data: &Dataset, sample: usize, h: f64) -> Vec<f64> {
    (0..params.dim())
        .map(|k| {
            let mut up = params.clone();
            let mut down = params.clone();
            up.0[k] += h;
            down.0[k] -= h;
            (arch.batch_loss(&up, data, &[sample]) - arch.batch_loss(&down, data, &[sample])) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
