//! Closed-form evaluators for the convergence bounds and stepsize schedules.

use crate::error::{invalid, Result};
use crate::noise_math::{eta, TheoryConstants, ZIndex};

/// Horizon and algorithm parameters fed to [`convergence_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub rounds: usize,
    pub local_steps: usize,
    pub clients: usize,
    pub client_lr: f64,
    pub sigma: f64,
    pub z: u32,
    pub dim: usize,
}

/// The three groups of the finite-`z` bound on the averaged squared gradient norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// Optimization, minibatch-variance and client-drift terms shared with FedAvg.
    pub standard: f64,
    /// Sign-compression bias terms, decaying like `sigma^{-2z}`.
    pub bias: f64,
    /// Injected-noise variance term, growing like `sigma^2`.
    pub variance: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.standard + self.bias + self.variance
    }
}

/// Evaluates the finite-`z` bound (server stepsize `eta_z sigma`), term by term.
pub fn convergence_terms(c: &TheoryConstants, p: &BoundParams) -> Result<BoundTerms> {
    c.validate()?;
    if p.z == 0 {
        return Err(invalid("z", "bound holds for finite z >= 1"));
    }
    if !(p.sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    if p.rounds == 0 || p.local_steps == 0 || p.clients == 0 {
        return Err(invalid("rounds", "rounds, local steps and clients must be >= 1"));
    }
    if c.smoothness.len() != p.dim {
        return Err(invalid(
            "dim",
            format!("{} smoothness constants for dimension {}", c.smoothness.len(), p.dim),
        ));
    }
    if !(p.client_lr > 0.0 && p.client_lr * c.l_max <= 1.0) {
        return Err(invalid(
            "client_lr",
            format!("needs 0 < lr <= 1/L_max = {}", 1.0 / c.l_max),
        ));
    }

    let t = p.rounds as f64;
    let e = p.local_steps as f64;
    let n = p.clients as f64;
    let gamma = p.client_lr;
    let z = p.z as i32;
    let zf = p.z as f64;
    let g = c.grad_bound;
    let l_max = c.l_max;
    let delta_f = c.f_init - c.f_star;

    let standard = 2.0 * delta_f / (t * e * gamma)
        + gamma * c.zeta2 * l_max / n
        + 4.0 * gamma * gamma * (e - 1.0) * e * l_max * l_max * (c.zeta2 + g * g) / 3.0;

    let moment = c.q_z + g.powi(4 * z + 2);
    let two_z_plus_one = 2.0 * zf + 1.0;
    let bias = 2f64.powi(2 * z + 1) * e.powi(2 * z) * moment.sqrt() * g
        / (std::f64::consts::SQRT_2 * two_z_plus_one * p.sigma.powi(2 * z))
        + gamma * 2f64.powi(4 * z) * e.powi(4 * z + 1) * moment * l_max
            / (2.0 * two_z_plus_one * two_z_plus_one * p.sigma.powi(4 * z));

    let eta_z = eta(ZIndex::Finite(p.z));
    let variance = 4.0 * eta_z * eta_z * gamma * p.sigma * p.sigma * c.smoothness_sum() / (e * n);

    Ok(BoundTerms {
        standard,
        bias,
        variance,
    })
}

pub fn convergence_bound(c: &TheoryConstants, p: &BoundParams) -> Result<f64> {
    convergence_terms(c, p).map(|t| t.total())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub client_lr: f64,
    /// `None` for the uniform case, where the caller must pick `sigma > E (G + Q_inf)`.
    pub sigma: Option<f64>,
    pub max_local_steps: f64,
}

/// Stepsize, noise scale and local-step cap for a budget of `tau = T E` gradient queries.
pub fn rate_schedule(z: ZIndex, clients: usize, tau: f64, l_max: f64) -> Result<Schedule> {
    if clients == 0 || !(tau >= 1.0) {
        return Err(invalid("tau", "need n >= 1 and tau >= 1"));
    }
    let n = clients as f64;
    let cap = if l_max > 0.0 { 1.0 / l_max } else { f64::INFINITY };
    Ok(match z {
        ZIndex::Finite(z) => {
            let zf = z as f64;
            let denom = 2.0 * zf + 1.0;
            Schedule {
                client_lr: (n.powf(zf / denom) * tau.powf(-(zf + 1.0) / denom)).min(cap),
                sigma: Some((n * tau).powf(1.0 / (4.0 * zf + 2.0))),
                max_local_steps: n.powf(-3.0 * zf / (4.0 * zf + 2.0)) * tau.powf((zf + 2.0) / (4.0 * zf + 2.0)),
            }
        }
        ZIndex::Infinity => Schedule {
            client_lr: (n.sqrt() / tau.sqrt()).min(cap),
            sigma: None,
            max_local_steps: n.powf(-0.75) * tau.powf(0.25),
        },
    })
}

/// Noise scale the uniform (`z = inf`) variant must exceed: `E (G + Q_inf)`.
pub fn sigma_threshold_inf(local_steps: usize, grad_bound: f64, q_inf: f64) -> f64 {
    local_steps as f64 * (grad_bound + q_inf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma: f64) -> BoundParams {
        BoundParams {
            rounds: 1,
            local_steps: 1,
            clients: 1,
            client_lr: 1.0,
            sigma,
            z: 1,
            dim: 1,
        }
    }

    #[test]
    fn only_optimization_term_survives() {
        let c = TheoryConstants::new(vec![0.0], 0.0, 0.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(convergence_bound(&c, &params(1.0)).unwrap(), 2.0);
    }

    #[test]
    fn variance_term_grows_quadratically() {
        let c = TheoryConstants::new(vec![1.0], 0.0, 0.5, 0.0, 0.0, 0.0, 1.0).unwrap();
        let a = convergence_terms(&c, &params(1e9)).unwrap();
        let b = convergence_terms(&c, &params(2e9)).unwrap();
        assert!((b.variance / a.variance - 4.0).abs() < 1e-9);
        assert!(convergence_bound(&c, &params(2e9)).unwrap() > convergence_bound(&c, &params(1e9)).unwrap());
        assert!(a.bias < 1e-15);
    }

    #[test]
    fn stepsize_precondition() {
        let c = TheoryConstants::new(vec![2.0], 0.0, 0.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert!(convergence_bound(&c, &params(1.0)).is_err());
        let ok = BoundParams {
            client_lr: 0.5,
            ..params(1.0)
        };
        assert!(convergence_bound(&c, &ok).is_ok());
        assert!(convergence_bound(&c, &BoundParams { sigma: 0.0, ..ok }).is_err());
        assert!(convergence_bound(&c, &BoundParams { dim: 2, ..ok }).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = rate_schedule(ZIndex::Finite(1), 10, 1000.0, 1e-12).unwrap();
        assert!((s.client_lr - 0.021_544_3).abs() < 1e-7);
        assert!((s.sigma.unwrap() - 4.641_59).abs() < 1e-5);
        let s = rate_schedule(ZIndex::Infinity, 4, 4.0, 0.5).unwrap();
        assert_eq!(s.client_lr, 1.0);
        assert!(s.sigma.is_none());
        let s = rate_schedule(ZIndex::Infinity, 4, 4.0, 2.0).unwrap();
        assert_eq!(s.client_lr, 0.5);
        let s = rate_schedule(ZIndex::Finite(1), 1, 4096.0, 1.0).unwrap();
        assert!((s.max_local_steps - 64.0).abs() < 1e-9);
        assert!(rate_schedule(ZIndex::Finite(1), 0, 10.0, 1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(sigma_threshold_inf(1, 3.0, 0.0), 3.0);
        assert_eq!(sigma_threshold_inf(1, 0.0, 0.0), 0.0);
        assert_eq!(sigma_threshold_inf(5, 1.0, 1.0), 10.0);
    }
}
