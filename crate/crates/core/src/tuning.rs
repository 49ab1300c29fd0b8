//! Plateau schedule for the noise scale.
//!
//! Starting from `sigma_init`, multiply `sigma` by `beta` whenever the
//! best-so-far objective has not improved for `patience` consecutive
//! observations. Once `sigma` exceeds `sigma_bound` it is frozen.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub sigma_init: f64,
    pub sigma_bound: f64,
    pub patience: u32,
    pub beta: f64,
    /// An observation improves only if it beats `best - rel_tol * |best|`. Default 0.
    pub rel_tol: f64,
}

impl PlateauConfig {
    pub fn new(sigma_init: f64, sigma_bound: f64, patience: u32, beta: f64) -> Result<Self> {
        let c = Self {
            sigma_init,
            sigma_bound,
            patience,
            beta,
            rel_tol: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(invalid("sigma_init", "must be positive"));
        }
        if !(self.sigma_bound >= self.sigma_init && self.sigma_bound.is_finite()) {
            return Err(invalid("sigma_bound", "must be finite and >= sigma_init"));
        }
        if self.patience == 0 {
            return Err(invalid("patience", "must be a positive integer"));
        }
        if !(1.5..=2.0).contains(&self.beta) {
            return Err(invalid("beta", format!("must lie in [1.5, 2], got {}", self.beta)));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol < 1.0) {
            return Err(invalid("rel_tol", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Upper bound on the number of jumps in any run: `ceil(log_beta(bound / init)) + 1`.
    pub fn max_jumps(&self) -> u32 {
        ((self.sigma_bound / self.sigma_init).ln() / self.beta.ln()).ceil() as u32 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    sigma: f64,
    best: f64,
    since_improvement: u32,
    jumps: u32,
}

impl PlateauState {
    pub fn new(config: &PlateauConfig) -> Self {
        Self {
            sigma: config.sigma_init,
            best: f64::INFINITY,
            since_improvement: 0,
            jumps: 0,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn rounds_since_improvement(&self) -> u32 {
        self.since_improvement
    }

    pub fn jumps(&self) -> u32 {
        self.jumps
    }

    /// Feeds one round's objective. Returns `true` if `sigma` was raised.
    pub fn observe(&mut self, config: &PlateauConfig, objective: f64) -> bool {
        debug_assert!(objective.is_finite(), "plateau observed a non-finite objective");
        let threshold = if self.best.is_finite() {
            self.best - config.rel_tol * self.best.abs()
        } else {
            f64::INFINITY
        };
        if objective < threshold {
            self.best = objective;
            self.since_improvement = 0;
            return false;
        }
        self.best = self.best.min(objective);
        self.since_improvement += 1;
        if self.since_improvement >= config.patience && self.sigma <= config.sigma_bound {
            self.sigma *= config.beta;
            self.since_improvement = 0;
            self.jumps += 1;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauPreset {
    pub name: &'static str,
    pub config: PlateauConfig,
}

const fn preset(name: &'static str, sigma_init: f64, sigma_bound: f64, patience: u32, beta: f64) -> PlateauPreset {
    PlateauPreset {
        name,
        config: PlateauConfig {
            sigma_init,
            sigma_bound,
            patience,
            beta,
            rel_tol: 0.0,
        },
    }
}

/// Reference hyperparameters for the three benchmark settings.
pub const PLATEAU_PRESETS: [PlateauPreset; 3] = [
    preset("mnist-noniid", 0.01, 0.5, 30, 1.5),
    preset("emnist", 0.0001, 0.1, 10, 2.0),
    preset("cifar10", 0.001, 0.1, 200, 1.5),
];

pub fn plateau_preset(name: &str) -> Option<PlateauConfig> {
    PLATEAU_PRESETS.iter().find(|p| p.name == name).map(|p| p.config)
}
