//! Uncertainty-aware regression networks that can say "I don't know".
//!
//! This crate trains dense feed-forward networks that output a conditional
//! Gaussian `(mu, sigma)` per sample and, optionally, learn to abstain on
//! low-confidence samples *during* training via an abstention loss. The
//! pieces:
//!
//! - [`net`]: the network itself — forward pass, exact analytic backprop,
//!   Adam updates, and an optional L2 penalty on the first layer.
//! - [`loss`]: Gaussian negative log-likelihood, the abstention loss with its
//!   prediction weight `q = min(1, (kappa/sigma)^2)`, and a plain MAE loss.
//! - [`controller`]: a velocity-form discrete PID controller that drives the
//!   measured abstention fraction to a user setpoint by modulating the
//!   abstention penalty `alpha` on fixed windows of training batches.
//! - [`trainer`]: the two-stage training protocol (spin-up on the baseline
//!   loss, then abstention training with `kappa`/`tau` frozen from validation
//!   sigma percentiles), early stopping, and setpoint-constrained best-model
//!   selection.
//! - [`synthdata`]: seeded generators for the benchmark datasets — spatially
//!   correlated anomaly fields with a piecewise-linear global response, the
//!   opportunity/shuffled-noise transform, the corrupted-pixels transform,
//!   and a 1-D line-plus-cloud example.
//! - [`evaluate`]: sigma-thresholded coverage, MAE-versus-coverage curves,
//!   z-score calibration, and ensemble envelopes.
//!
//! The crate is `no_std`-compatible (with `alloc`); enable the `libm` feature
//! when building without `std`. All generators and training loops are
//! deterministic functions of their configuration and seed.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("abstention-core needs either the `std` or the `libm` feature for float math");

pub mod controller;
pub mod evaluate;
pub mod loss;
pub mod math;
pub mod matrix;
pub mod net;
pub mod synthdata;
pub mod trainer;

pub use matrix::Matrix;
pub use net::{Activation, LayerSpec, MlpModel, PredictionPair};
pub use trainer::{RunRecord, TrainConfig};
