//! Weakly-supervised anomaly detection for multivariate plant sensor data.
//!
//! Normal-operation training data comes from a simulated plant (the digital
//! twin); a handful of labeled anomalies from the measured plant refine the
//! detectors. The crate contains:
//!
//! - [`synthgen`]: a hysteresis-controlled CHP plant generator producing a
//!   clean twin stream and a noisy, fault-injected "real" stream.
//! - [`features`]: sliding-window statistics and z-score standardization.
//! - [`nn`]: a small dense network engine (exact backprop, Adam, clipping).
//! - [`autoencoders`]: the Siamese autoencoder and the plain autoencoder.
//! - [`clustering`]: k-means and the Cluster Centers score, plus KNN.
//! - [`baselines`]: raw-series MAE and PCA reconstruction scores.
//! - [`metrics`]: AP, ROC AUC, F-beta and quantile thresholds.
//! - [`harness`]: splits, cross-validation, line search, sweeps, ablations.

pub mod autoencoders;
pub mod baselines;
pub mod clustering;
pub mod error;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod synthgen;

pub use error::{Error, Result};
