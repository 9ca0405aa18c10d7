//! Closed-form score estimators for Brownian-noise diffusion models.
//!
//! The crate computes the empirical score of a finite dataset (the score of
//! its Gaussian KDE), its Gaussian mollification, and the log-exponential
//! double-kernel density estimator (LED-KDE) whose score the mollified field
//! is. On top of those it provides a reverse-SDE sampler, probability-flow
//! log-densities and the diagnostics used to compare memorizing and
//! generalizing score fields:
//!
//! | module | contents |
//! |--------|----------|
//! | [`dataset`] | synthetic targets with analytic oracles, IDX/CSV I/O |
//! | [`score`] | softmax weights, `m^N_t`, score, Jacobian, local covariance |
//! | [`mollify`] | Monte-Carlo and time-shift mollification |
//! | [`ledkde`] | grid KDE, log-space smoothing, LED-KDE |
//! | [`sampler`] | [`sampler::ScoreField`] backends, reverse SDE, flow log-density |
//! | [`analysis`] | local PCA, intrinsic dimension, KL, `N_eff`, bias/variance, memorization |
//! | [`spectral`] | cosine-basis heat-semigroup score on `[-1, 1]^d` |
//!
//! Data-parallel loops (trajectories, query points, replicates) run on rayon
//! when the `parallel` feature is enabled (the default) and sequentially
//! otherwise; results are identical either way because every random stream
//! is derived from `(seed, label, index)` rather than from execution order.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod ledkde;
pub mod linalg;
pub mod mollify;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod spectral;

pub use dataset::{Dataset, TargetSpec};
pub use error::{Error, Result};
pub use mollify::{Bandwidth, MollifyMode, MollifySpec};
pub use sampler::{SampleBatch, ScoreField, SdeConfig, TimeGrid};
