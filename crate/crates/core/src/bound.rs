//! Convergence bound of D-PSGD as a function of the density parameter λ.
//!
//! For a smooth objective with bounded gradient variance, identical initial
//! models and a learning rate satisfying
//! `ηL + 5η²L²/(1-λ)² ≤ 1`, the average squared gradient norm after `K`
//! iterations is bounded by
//!
//! ```text
//! 2(F(X1) - F_inf)/(ηK) + ηLσ²/n  +  η²L²σ²((1+λ²)/(1-λ²) - 1)
//! └──────── synchronous SGD ────┘    └──────── network error ───────┘
//! ```
//!
//! The first part is what fully synchronized SGD would achieve; the second
//! grows without bound as λ → 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration count of the bound. `Infinite` makes the `1/K` term exactly
/// zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Iterations {
    Finite(u64),
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Lipschitz constant L of the gradient.
    pub lipschitz: f64,
    /// Variance bound σ².
    pub variance: f64,
    /// Multiplicative variance constant β. Kept for completeness; it does
    /// not enter the bound.
    pub beta: f64,
    pub learning_rate: f64,
    /// F(X1).
    pub f_initial: f64,
    /// Lower bound F_inf of the objective.
    pub f_inf: f64,
    pub iterations: Iterations,
    pub node_count: usize,
}

impl Default for BoundParams {
    /// L = 1, σ² = 1, η = 0.01, F(X1) = 1, F_inf = 0, n = 6, K → ∞.
    fn default() -> Self {
        BoundParams {
            lipschitz: 1.0,
            variance: 1.0,
            beta: 0.0,
            learning_rate: 0.01,
            f_initial: 1.0,
            f_inf: 0.0,
            iterations: Iterations::Infinite,
            node_count: 6,
        }
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("bound parameters", reason.to_string()));
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return bad("lipschitz must be > 0");
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return bad("variance must be >= 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.f_initial.is_finite() && self.f_inf.is_finite() && self.f_initial >= self.f_inf) {
            return bad("f_initial must be >= f_inf");
        }
        if self.iterations == Iterations::Finite(0) {
            return bad("iterations must be >= 1");
        }
        if self.node_count == 0 {
            return bad("node_count must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub total: f64,
    /// Fully synchronized SGD part.
    pub sync_term: f64,
    /// Network error part; zero at λ = 0.
    pub network_term: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda must lie in [0, 1), got {lambda}")))
    }
}

pub fn bound_value(params: &BoundParams, lambda: f64) -> Result<BoundValue> {
    params.validate()?;
    check_lambda(lambda)?;
    let BoundParams {
        lipschitz: l,
        variance: s2,
        learning_rate: eta,
        ..
    } = *params;
    let start = match params.iterations {
        Iterations::Finite(k) => 2.0 * (params.f_initial - params.f_inf) / (eta * k as f64),
        Iterations::Infinite => 0.0,
    };
    let sync_term = start + eta * l * s2 / params.node_count as f64;
    let l2 = lambda * lambda;
    let network_term = eta * eta * l * l * s2 * ((1.0 + l2) / (1.0 - l2) - 1.0);
    Ok(BoundValue {
        total: sync_term + network_term,
        sync_term,
        network_term,
    })
}

/// Whether `η` satisfies `ηL + 5η²L²(1/(1-λ))² ≤ 1`.
pub fn learning_rate_feasible(params: &BoundParams, lambda: f64) -> Result<bool> {
    params.validate()?;
    check_lambda(lambda)?;
    let el = params.learning_rate * params.lipschitz;
    let gap = 1.0 / (1.0 - lambda);
    Ok(el + 5.0 * el * el * gap * gap <= 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub total: f64,
    pub sync: f64,
    pub network: f64,
}

/// One row per λ, in input order.
pub fn lambda_sweep(params: &BoundParams, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let v = bound_value(params, lambda)?;
            Ok(SweepRow {
                lambda,
                total: v.total,
                sync: v.sync_term,
                network: v.network_term,
            })
        })
        .collect()
}

/// `points` evenly spaced values `0, h, …, (points-1)h` with
/// `h = upper / (points - 1)`.
pub fn lambda_grid(upper: f64, points: usize) -> Result<Vec<f64>> {
    check_lambda(upper)?;
    match points {
        0 => Err(Error::invalid("lambda grid", "at least one point is required")),
        1 => Ok(vec![0.0]),
        _ => {
            let mut grid: Vec<f64> = (0..points).map(|k| upper * k as f64 / (points - 1) as f64).collect();
            grid[points - 1] = upper;
            Ok(grid)
        }
    }
}
