//! Sign-compressed federated optimization with z-distribution noise.
//!
//! - [`noise_math`]: the z-distribution, `Psi_z`, expected signs and bias bounds.
//! - [`compressors`]: sign, quantizer and error-feedback compressors with a bit-exact codec.
//! - [`problems`]: heterogeneous objectives and gradient-noise models.
//! - [`fedsim`]: the round engine, metrics and bound evaluators.
//! - [`tuning`]: the plateau noise-scale schedule.
//! - [`dp`]: clipping plus Gaussian perturbation before the sign.
//! - [`experiment`]: config files, sweeps and result artifacts.
//! - [`verify`]: the self-check suite behind `signfed verify`.

// `!(x > 0.0)` deliberately rejects NaN; quadrature nodes are tabulated in full.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod codec;
pub mod compressors;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod fedsim;
pub mod noise_math;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod tuning;
pub mod verify;

pub use error::{Error, Result};
