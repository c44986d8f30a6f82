//! Basis-risk metrics for index insurance on yield panels, and the tools to
//! study how those metrics are biased when a zone is observed over few
//! periods `T` but many fields `N`.
//!
//! The crate is organised bottom-up:
//!
//! - [`panel`] ingests and validates `T × N` yield panels and their moments.
//! - [`metrics`] computes total R² for arbitrary linear indices and the
//!   optimal (first principal component) index.
//! - [`quantreg`] provides the exact two-parameter quantile-regression fits
//!   behind the total quantile pseudo-R².
//! - [`spiked`] builds single-spike population covariance models.
//! - [`sampler`] draws Gaussian panels from dense or spiked models.
//! - [`asymptotics`] evaluates the fixed-`T`, growing-`N` limit law of the
//!   first-eigenvalue share and its bias.
//! - [`harness`] runs reproducible Monte Carlo bias experiments.

pub mod asymptotics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod quad;
pub mod quantreg;
pub mod rng;
pub mod sampler;
pub mod spiked;
pub mod stats;

pub use error::{Error, Result};
pub use nalgebra;
pub use panel::{IngestOptions, MissingPolicy, YieldPanel};
