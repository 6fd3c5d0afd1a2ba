//! Differentially private SGD with dynamic clipping thresholds.
//!
//! The clipping threshold in DP-SGD trades clipping bias against injected
//! noise, and its best value drifts as training progresses. This crate
//! estimates the distribution of per-example gradient norms each iteration
//! through a privately released histogram and re-derives the threshold from
//! it, either as a target percentile of the norms or as the minimizer of
//! the expected squared error of a single privatized gradient. A noise
//! split keeps the joint gradient-plus-histogram release exactly as
//! expensive as plain DP-SGD under Rényi-DP accounting.
//!
//! Modules:
//! - [`accountant`]: RDP of the subsampled Gaussian mechanism, composition,
//!   (ε, δ) conversion, σ calibration, the noise split, and tuning cost.
//! - [`histogram`]: noisy gradient-norm histograms with sensitivity 1.
//! - [`strategy`]: percentile and expected-error threshold selection.
//! - [`models`]: logistic regression and a small MLP with exact
//!   per-example gradients.
//! - [`trainer`]: the Poisson-sampled private training loop.
//! - [`data`]: synthetic norm populations, Gaussian blobs, CSV loading.
//! - [`cli`]: the `dcsgd` command-line front end.

pub mod accountant;
pub mod cli;
pub mod data;
pub mod histogram;
pub mod models;
pub mod strategy;
pub mod trainer;
