//! Decentralized parallel SGD over wireless links.
//!
//! The crate follows one pipeline:
//!
//! 1. [`propagation`] turns node positions and radio parameters into a
//!    matrix of pairwise channel capacities.
//! 2. [`consensus`] turns per-node broadcast rates into a connectivity
//!    pattern, a row-stochastic averaging matrix `W`, and its density
//!    parameter λ.
//! 3. [`optimizer`] picks the rates that minimize the per-round airtime
//!    subject to `λ ≤ λ_target`.
//! 4. [`dpsgd`] trains a small model with D-PSGD over the resulting `W` and
//!    charges each iteration its compute and communication time.
//! 5. [`bound`] evaluates the convergence bound as a function of λ.
//! 6. [`scenario`] reads experiment files, runs sweeps and writes CSV.
//!
//! ```
//! use ndc_dpsgd::consensus::spectral_lambda;
//! use ndc_dpsgd::optimizer::{optimize_rates, OptimizerConfig};
//! use ndc_dpsgd::propagation::{build_channel_matrix, NodeLayout, RadioParams};
//!
//! let layout = NodeLayout::six_node_reference();
//! let channels = build_channel_matrix(&layout, &RadioParams::reference(5.0))?;
//! let assignment = optimize_rates(&channels, &OptimizerConfig::new(0.8, 698_880.0))?;
//! assert!(assignment.lambda <= 0.8 + 1e-9);
//! # Ok::<(), ndc_dpsgd::Error>(())
//! ```

pub mod bound;
pub mod consensus;
pub mod dpsgd;
mod error;
pub mod optimizer;
pub mod propagation;
pub mod scenario;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/bound.md")]
    mod bound {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/dpsgd.md")]
    mod dpsgd {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
