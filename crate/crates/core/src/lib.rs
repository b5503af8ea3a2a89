//! Rain-field reconstruction from path-integrated microwave-link attenuation.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: exact intersection lengths between link paths and grid cells.
//! - [`forward`]: the power-law path-integral operator, noise models and the
//!   Gaussian likelihood with its gradient.
//! - [`gp1d`]: the one-dimensional interval-observation Gaussian-process
//!   benchmark with its closed-form posterior.
//! - [`diffusion`]: variance-exploding noise schedules, bridge kernels, the
//!   denoiser interface (analytic Gaussian and serialized graphs) and
//!   unconditional ancestral sampling.
//! - [`samplers`]: training-free posterior samplers (DPS, TDS, DAPS, RedDiff).
//! - [`censored`]: censored (power-transformed) Gaussian-process prior and its
//!   EM fit with Gibbs / Metropolis-within-Gibbs imputation.
//! - [`baselines`]: IDW, GMZ and ordinary kriging reconstructions.
//! - [`metrics`]: field and ensemble evaluation metrics.
//!
//! Batched work (ensembles, per-cell interpolation, ray tracing over a
//! network) runs on rayon when the `parallel` feature is enabled. Every
//! randomised routine derives one RNG stream per work item from a master
//! seed, so serial and parallel execution produce identical output.

// `!(x > 0.0)` guards double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod censored;
pub mod diffusion;
pub mod error;
pub mod forward;
pub mod gp1d;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
