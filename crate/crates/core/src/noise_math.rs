//! The z-distribution family and its analytic companions.
//!
//! `p_z(t) = exp(-t^{2z} / 2) / (2 eta_z)` with `eta_z = 2^{1/(2z)} Gamma(1 + 1/(2z))`.
//! `z = 1` is the standard Gaussian; the `z -> inf` limit is uniform on `[-1, 1]`
//! and is represented explicitly by [`ZIndex::Infinity`].
//!
//! The central identity used throughout the crate is
//! `eta_z * sigma * E[Sign(x + sigma xi_z)] = sigma * Psi_z(x / sigma)`
//! where `Psi_z(x) = int_0^x exp(-t^{2z}/2) dt`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature;

/// Absolute tolerance for every `Psi_z` evaluation.
pub const PSI_ABS_TOL: f64 = 1e-12;

/// Tail cutoff: `exp(-t^{2z}/2)` underflows below `1e-300` once `t^{2z} > 1400`.
const TAIL_EXPONENT: f64 = 1400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZIndex {
    Finite(u32),
    Infinity,
}

impl ZIndex {
    pub fn finite(z: u32) -> Result<Self> {
        if z == 0 {
            return Err(invalid("z", "must be a positive integer"));
        }
        Ok(ZIndex::Finite(z))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ZIndex::Infinity)
    }
}

impl fmt::Display for ZIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZIndex::Finite(z) => write!(f, "{z}"),
            ZIndex::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for ZIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Infinity" | "∞" => Ok(ZIndex::Infinity),
            other => {
                let z: u32 = other
                    .parse()
                    .map_err(|_| invalid("z", format!("expected a positive integer or `inf`, got `{other}`")))?;
                ZIndex::finite(z)
            }
        }
    }
}

/// Noise family and scale for the stochastic sign operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub z: ZIndex,
    pub sigma: f64,
}

impl NoiseSpec {
    /// `sigma = 0` is allowed and denotes the exact (noiseless) sign.
    pub fn new(z: ZIndex, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        if let ZIndex::Finite(0) = z {
            return Err(invalid("z", "must be a positive integer"));
        }
        Ok(Self { z, sigma })
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Problem and noise constants consumed by the bound evaluators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Per-coordinate smoothness `L_j`.
    pub smoothness: Vec<f64>,
    pub l_max: f64,
    /// Minibatch gradient-noise variance `zeta^2`.
    pub zeta2: f64,
    /// Bound `G` on every client gradient norm.
    pub grad_bound: f64,
    /// Bound on the `(4z+2)`-th moment of the gradient noise.
    pub q_z: f64,
    /// Almost-sure sup-norm bound on the gradient noise.
    pub q_inf: f64,
    pub f_star: f64,
    /// Expected objective at the initial point, `E[f(x_0)]`.
    pub f_init: f64,
}

impl TheoryConstants {
    pub fn new(
        smoothness: Vec<f64>,
        zeta2: f64,
        grad_bound: f64,
        q_z: f64,
        q_inf: f64,
        f_star: f64,
        f_init: f64,
    ) -> Result<Self> {
        let l_max = smoothness.iter().copied().fold(0.0, f64::max);
        let c = Self {
            smoothness,
            l_max,
            zeta2,
            grad_bound,
            q_z,
            q_inf,
            f_star,
            f_init,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.smoothness.iter().any(|l| !(*l >= 0.0)) {
            return Err(invalid("smoothness", "all L_j must be >= 0"));
        }
        let expected_max = self.smoothness.iter().copied().fold(0.0, f64::max);
        if self.l_max != expected_max {
            return Err(invalid("l_max", format!("must equal max L_j = {expected_max}")));
        }
        for (name, v) in [
            ("zeta2", self.zeta2),
            ("grad_bound", self.grad_bound),
            ("q_z", self.q_z),
            ("q_inf", self.q_inf),
        ] {
            if !(v >= 0.0) {
                return Err(invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn smoothness_sum(&self) -> f64 {
        self.smoothness.iter().sum()
    }
}

/// Normalizer `eta_z`; exactly 1 for the uniform limit.
pub fn eta(z: ZIndex) -> f64 {
    match z {
        ZIndex::Infinity => 1.0,
        ZIndex::Finite(z) => {
            let a = 1.0 / (2.0 * z as f64);
            (a * std::f64::consts::LN_2 + statrs::function::gamma::ln_gamma(1.0 + a)).exp()
        }
    }
}

pub fn pdf(z: ZIndex, t: f64) -> f64 {
    match z {
        ZIndex::Infinity => {
            if t.abs() <= 1.0 {
                0.5
            } else {
                0.0
            }
        }
        ZIndex::Finite(z) => (-0.5 * t.abs().powi(2 * z as i32)).exp() / (2.0 * eta(ZIndex::Finite(z))),
    }
}

/// `Psi_z(x) = int_0^x exp(-t^{2z}/2) dt`; `Psi_inf(x) = clamp(x, -1, 1)`.
pub fn psi(z: ZIndex, x: f64) -> f64 {
    match z {
        ZIndex::Infinity => x.clamp(-1.0, 1.0),
        ZIndex::Finite(z) => {
            if x == 0.0 {
                return 0.0;
            }
            let power = 2 * z as i32;
            let cutoff = TAIL_EXPONENT.powf(1.0 / power as f64);
            let upper = x.abs().min(cutoff);
            let r = quadrature::integrate(|t| (-0.5 * t.powi(power)).exp(), 0.0, upper, PSI_ABS_TOL);
            x.signum() * r.value
        }
    }
}

/// `P(xi_z <= t)`.
pub fn cdf(z: ZIndex, t: f64) -> f64 {
    match z {
        ZIndex::Infinity => 0.5 * (t.clamp(-1.0, 1.0) + 1.0),
        ZIndex::Finite(_) => 0.5 + psi(z, t) / (2.0 * eta(z)),
    }
}

/// `E[Sign(x + sigma xi_z)] = Psi_z(x / sigma) / eta_z`.
///
/// `sigma = 0` is rejected: the expectation is then the deterministic sign.
pub fn expected_sign(spec: NoiseSpec, x: f64) -> Result<f64> {
    if !(spec.sigma > 0.0) {
        return Err(invalid(
            "sigma",
            "expected_sign needs sigma > 0; use the exact sign for sigma = 0",
        ));
    }
    Ok(psi(spec.z, x / spec.sigma) / eta(spec.z))
}

/// Upper bound on `||eta_z sigma E[Sign(x + sigma xi_z)] - x||^2`:
/// `||x||_{4z+2}^{4z+2} / (4 (2z+1)^2 sigma^{4z})`.
pub fn bias_bound(z: u32, x: &[f64], sigma: f64) -> Result<f64> {
    if z == 0 {
        return Err(invalid("z", "must be a positive integer"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "bias bound is undefined for sigma <= 0"));
    }
    let p = 4 * z as i32 + 2;
    let norm_pow: f64 = x.iter().map(|v| v.abs().powi(p)).sum();
    let two_z_plus_one = 2.0 * z as f64 + 1.0;
    Ok(norm_pow / (4.0 * two_z_plus_one * two_z_plus_one * sigma.powi(4 * z as i32)))
}

/// Reusable draw source for `xi_z`.
///
/// Finite `z` uses `|xi| = (2U)^{1/(2z)}` with `U ~ Gamma(1/(2z), 1)` and an
/// independent fair sign; the infinite case is uniform on `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct ZSampler {
    z: ZIndex,
    gamma: Option<Gamma<f64>>,
}

impl ZSampler {
    pub fn new(z: ZIndex) -> Self {
        let gamma = match z {
            ZIndex::Finite(z) => Some(Gamma::new(1.0 / (2.0 * z as f64), 1.0).expect("shape and scale are positive")),
            ZIndex::Infinity => None,
        };
        Self { z, gamma }
    }

    pub fn z(&self) -> ZIndex {
        self.z
    }
}

/// Maps a Gamma(1/(2z), 1) draw to the magnitude of `xi_z`.
pub fn magnitude_from_gamma(z: u32, u: f64) -> f64 {
    (2.0 * u).powf(1.0 / (2.0 * z as f64))
}

impl Distribution<f64> for ZSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match (self.z, &self.gamma) {
            (ZIndex::Finite(z), Some(gamma)) => {
                let magnitude = magnitude_from_gamma(z, gamma.sample(rng));
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            _ => rng.random_range(-1.0..=1.0),
        }
    }
}

/// One draw of `xi_z` (unit scale; the caller multiplies by `sigma`).
pub fn sample<R: Rng + ?Sized>(spec: NoiseSpec, rng: &mut R) -> f64 {
    ZSampler::new(spec.z).sample(rng)
}

/// Grid used by [`cdf_sup_gap`]: `-3, -2.99, ..., 3`.
pub fn cdf_gap_grid() -> impl Iterator<Item = f64> {
    (0..=600).map(|k| -3.0 + 0.01 * k as f64)
}

/// `sup_t |CDF_z(t) - CDF_inf(t)|` over [`cdf_gap_grid`].
pub fn cdf_sup_gap(z: u32) -> Result<f64> {
    let z = ZIndex::finite(z)?;
    Ok(cdf_gap_grid()
        .map(|t| (cdf(z, t) - cdf(ZIndex::Infinity, t)).abs())
        .fold(0.0, f64::max))
}
