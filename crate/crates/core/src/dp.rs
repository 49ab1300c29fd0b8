//! Client-level DP sign compression: l2 clipping followed by Gaussian
//! perturbation and the sign operator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compressors::{l2_norm, stochastic_signs, CompressedUpdate, UpdateKind};
use crate::error::{invalid, Result};
use crate::noise_math::{NoiseSpec, ZIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Clipping radius `C`.
    pub clip: f64,
    /// Noise multiplier; the per-coordinate Gaussian std is `noise_multiplier * clip`.
    pub noise_multiplier: f64,
}

impl DpConfig {
    pub fn new(clip: f64, noise_multiplier: f64) -> Result<Self> {
        let c = Self { clip, noise_multiplier };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(invalid("clip", "must be positive"));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(invalid("noise_multiplier", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// The equivalent stochastic-sign noise: Gaussian (`z = 1`) at scale `noise_multiplier * clip`.
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            z: ZIndex::Finite(1),
            sigma: self.noise_multiplier * self.clip,
        }
    }
}

/// `v / max(1, ||v|| / C)`.
pub fn clip(v: &[f64], c: f64) -> Vec<f64> {
    let factor = (l2_norm(v) / c).max(1.0);
    v.iter().map(|x| x / factor).collect()
}

pub fn dp_compress<R: Rng + ?Sized>(v: &[f64], dp: &DpConfig, rng: &mut R) -> Result<CompressedUpdate> {
    dp.validate()?;
    let clipped = clip(v, dp.clip);
    let signs = stochastic_signs(dp.noise_spec(), &clipped, rng);
    Ok(CompressedUpdate::signs_only(UpdateKind::DpSign, &signs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpPreset {
    /// Privacy budget epsilon the noise multiplier was calibrated for (documentation only).
    pub epsilon: f64,
    pub server_lr_fedavg: f64,
    pub server_lr_sign: f64,
    pub noise_multiplier: f64,
}

/// Reference (budget, server stepsize, noise multiplier) rows; clip radius 0.01.
pub const DP_PRESETS: [DpPreset; 6] = [
    DpPreset {
        epsilon: 1.0029,
        server_lr_fedavg: 1.0,
        server_lr_sign: 0.03,
        noise_multiplier: 2.77,
    },
    DpPreset {
        epsilon: 2.0171,
        server_lr_fedavg: 2.0,
        server_lr_sign: 0.05,
        noise_multiplier: 1.57,
    },
    DpPreset {
        epsilon: 4.0459,
        server_lr_fedavg: 5.0,
        server_lr_sign: 0.05,
        noise_multiplier: 1.02,
    },
    DpPreset {
        epsilon: 6.0135,
        server_lr_fedavg: 5.0,
        server_lr_sign: 0.05,
        noise_multiplier: 0.845,
    },
    DpPreset {
        epsilon: 8.0336,
        server_lr_fedavg: 5.0,
        server_lr_sign: 0.05,
        noise_multiplier: 0.75,
    },
    DpPreset {
        epsilon: 9.9996,
        server_lr_fedavg: 5.0,
        server_lr_sign: 0.05,
        noise_multiplier: 0.685,
    },
];

pub const DP_PRESET_CLIP: f64 = 0.01;
