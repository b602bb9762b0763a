//! Connectivity and gossip averaging matrices.
//!
//! Node `i` broadcasting at rate `R_i` is heard by every `j` whose effective
//! capacity satisfies `C_ij ≥ R_i`. Each row of the adjacency matrix always
//! contains the self loop, and the averaging matrix is the row-normalized
//! adjacency. The network density parameter is the largest eigenvalue
//! magnitude of `W` once the Perron eigenvalue 1 has been removed.

mod eigen;

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::propagation::ChannelMatrix;

/// Distance from `1 + 0i` within which an eigenvalue is accepted as the
/// Perron eigenvalue.
pub const PERRON_TOLERANCE: f64 = 1e-8;

/// Tolerance on `W·1 = 1`.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// 0/1 adjacency with all self loops set. Row `i` lists the nodes whose
/// models node `i` averages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    n: usize,
    adjacency: Vec<bool>,
}

impl Connectivity {
    /// Builds connectivity from an explicit 0/1 pattern; the diagonal is
    /// forced to one.
    pub fn from_fn(n: usize, mut linked: impl FnMut(usize, usize) -> bool) -> Self {
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = i == j || linked(i, j);
            }
        }
        Connectivity { n, adjacency }
    }

    pub fn complete(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |_, _| false)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Number of ones in row `i`, self loop included.
    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&a| a).count()
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.adjacency[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Keeps only links present in both directions (`A_ij ← A_ij·A_ji`).
    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(i, j) && self.get(j, i))
    }

    /// Same graph with node `perm[i]` playing the role of node `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_fn(self.n, |i, j| self.get(perm[i], perm[j]))
    }
}

/// Applies the reception rule to per-node broadcast rates. An infinite rate
/// means the node reaches nobody.
pub fn connectivity_from_rates(channels: &ChannelMatrix, rates: &[f64]) -> Result<Connectivity> {
    if rates.len() != channels.len() {
        return Err(Error::Contract(format!(
            "{} rates given for {} nodes",
            rates.len(),
            channels.len()
        )));
    }
    if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| r.is_nan() || **r <= 0.0) {
        return Err(Error::Contract(format!("rate of node {i} must be positive, got {r}")));
    }
    // The rule is stated for row i: node i transmits at R_i and link (i, j)
    // exists when the capacity from i to j supports it.
    Ok(Connectivity::from_fn(channels.len(), |i, j| {
        channels.effective(i, j) >= rates[i]
    }))
}

/// Row-stochastic gossip matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragingMatrix {
    w: DMatrix<f64>,
}

impl AveragingMatrix {
    /// `W_ij = A_ij / Σ_j A_ij`.
    pub fn from_connectivity(conn: &Connectivity) -> Self {
        let n = conn.len();
        let w = DMatrix::from_fn(n, n, |i, j| {
            if conn.get(i, j) {
                1.0 / conn.degree(i) as f64
            } else {
                0.0
            }
        });
        let out = AveragingMatrix { w };
        debug_assert!(out.max_row_sum_error() <= ROW_SUM_TOLERANCE);
        out
    }

    /// Accepts any non-negative matrix whose rows sum to one. Unlike
    /// [`AveragingMatrix::from_connectivity`] the row entries need not be
    /// equal.
    pub fn from_row_stochastic(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::Contract(format!(
                "averaging matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("averaging matrix", "entries must be finite and >= 0"));
        }
        let out = AveragingMatrix { w };
        let err = out.max_row_sum_error();
        if err > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(
                "averaging matrix",
                format!("rows must sum to 1 (worst deviation {err:e})"),
            ));
        }
        Ok(out)
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_connectivity(&Connectivity::complete(n))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_connectivity(&Connectivity::identity(n))
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn is_symmetric(&self) -> bool {
        self.w == self.w.transpose()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.w.row_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Convenience for [`spectral_lambda`].
    pub fn lambda(&self) -> Result<f64> {
        spectral_lambda(self)
    }
}

/// Averaging matrix induced by broadcast rates, optionally keeping only
/// mutual links.
pub fn averaging_matrix_for_rates(
    channels: &ChannelMatrix,
    rates: &[f64],
    mutual_links: bool,
) -> Result<(Connectivity, AveragingMatrix)> {
    let mut conn = connectivity_from_rates(channels, rates)?;
    if mutual_links {
        conn = conn.symmetrized();
    }
    let w = AveragingMatrix::from_connectivity(&conn);
    Ok((conn, w))
}

pub fn averaging_matrix(conn: &Connectivity) -> AveragingMatrix {
    AveragingMatrix::from_connectivity(conn)
}

/// `max{|λ2(W)|, |λn(W)|}`: the largest eigenvalue magnitude after removing
/// one eigenvalue equal to 1. Eigenvalues of a non-symmetric `W` may be
/// complex; magnitudes are compared. Tight clusters that look like a split
/// multiple eigenvalue are replaced by their mean first, so defective `W`
/// (common with one-way links) still gives λ to about 1e-12.
pub fn spectral_lambda(w: &AveragingMatrix) -> Result<f64> {
    let n = w.len();
    if n == 1 {
        return Ok(0.0);
    }
    let mut eigenvalues = eigen::eigenvalues(&w.w).ok_or_else(|| Error::Numerical {
        message: "QR iteration for the eigenvalues did not converge".into(),
        dump: dump_matrix(&w.w),
    })?;
    // Row sums are 1, so the infinity norm is 1.
    eigen::merge_defective(&mut eigenvalues, 1.0);
    let (perron, distance) = eigenvalues
        .iter()
        .enumerate()
        .map(|(k, z)| (k, ((z.re - 1.0).powi(2) + z.im.powi(2)).sqrt()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("n >= 2");
    if distance > PERRON_TOLERANCE {
        return Err(Error::Numerical {
            message: format!("no eigenvalue within {PERRON_TOLERANCE:e} of 1 (closest is {distance:e} away)"),
            dump: dump_matrix(&w.w),
        });
    }
    let lambda = eigenvalues
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != perron)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max);
    if lambda > 1.0 + PERRON_TOLERANCE {
        return Err(Error::Numerical {
            message: format!("eigenvalue magnitude {lambda} exceeds 1 for a row-stochastic matrix"),
            dump: dump_matrix(&w.w),
        });
    }
    Ok(lambda.min(1.0))
}

fn dump_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "[{}]", cells.join(", "));
    }
    out
}
