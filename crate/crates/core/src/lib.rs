//! # trace-kit
//!
//! Diagnostics for the absolute risk change `|ΔR| = |R_P(Q̃) − R_P(Q)|`
//! incurred when a model `Q` trained on a source sample is replaced by a
//! model `Q̃` trained on a covariate-shifted sample, judged on the source
//! (anchor) distribution `P`.
//!
//! The diagnostic splits `|ΔR|` into computable, itemized terms:
//!
//! * validation gaps of both models,
//! * a model-change term (mean logit distance on target inputs),
//! * an empirical shift penalty (Lipschitz proxies times a transport
//!   distance between feature clouds),
//! * finite-sample remainders (label noise, validation error, population
//!   residual),
//!
//! with an MMD-based alternative for the population shift. The crate also
//! provides the label-free ranking score used to order candidate updates,
//! deployment-gate scores and metrics, synthetic shift worlds, and a
//! closed-form ridge-regression oracle.
//!
//! ```
//! use trace_kit::diagnostics::label_noise_remainder;
//!
//! let r = label_noise_remainder(200, 1.0, 0.05).unwrap();
//! assert!((r - 0.20932).abs() < 1e-4);
//! ```

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod config;
pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod models;
pub mod sensitivity;
pub mod transport;

pub use error::{Error, Result};
