//! Objective oracles for the simulator.
//!
//! Every problem is a finite-sum `f(x) = (1/n) sum_i f_i(x)` with one
//! component per client.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{seeded, Purpose};

pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;
    fn n_clients(&self) -> usize;
    fn client_objective(&self, client: usize, x: &[f64]) -> f64;
    fn client_gradient(&self, client: usize, x: &[f64], out: &mut [f64]);

    /// Known minimizer and minimum value, when available in closed form.
    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }

    /// Per-coordinate smoothness constants `L_j` of `f`, when known.
    fn smoothness(&self) -> Option<Vec<f64>> {
        None
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n_clients();
        (0..n).map(|i| self.client_objective(i, x)).sum::<f64>() / n as f64
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_clients();
        let mut total = vec![0.0; self.dim()];
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            self.client_gradient(i, x, &mut g);
            for (t, gi) in total.iter_mut().zip(&g) {
                *t += gi;
            }
        }
        total.iter_mut().for_each(|t| *t /= n as f64);
        total
    }
}

/// `f_i(x) = ||x - y_i||^2 / 2` with Gaussian targets `y_i`.
#[derive(Debug, Clone)]
pub struct Consensus {
    targets: Vec<Vec<f64>>,
}

impl Consensus {
    pub fn from_targets(targets: Vec<Vec<f64>>) -> Result<Self> {
        let dim = targets.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || targets.iter().any(|t| t.len() != dim) {
            return Err(invalid(
                "targets",
                "need at least one target, all of the same positive dimension",
            ));
        }
        Ok(Self { targets })
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    fn mean_target(&self) -> Vec<f64> {
        let n = self.targets.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for t in &self.targets {
            for (a, b) in m.iter_mut().zip(t) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

pub fn make_consensus(dim: usize, n_clients: usize, seed: u64) -> Result<Consensus> {
    if dim == 0 || n_clients == 0 {
        return Err(invalid("dim", "dimension and client count must be >= 1"));
    }
    let mut rng = seeded(seed, Purpose::ProblemData);
    let targets = (0..n_clients)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    Consensus::from_targets(targets)
}

impl Problem for Consensus {
    fn dim(&self) -> usize {
        self.targets[0].len()
    }

    fn n_clients(&self) -> usize {
        self.targets.len()
    }

    fn client_objective(&self, client: usize, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.targets[client])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    fn client_gradient(&self, client: usize, x: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(&self.targets[client]) {
            *o = a - b;
        }
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        let x = self.mean_target();
        let f = self.objective(&x);
        Some((x, f))
    }

    fn smoothness(&self) -> Option<Vec<f64>> {
        Some(vec![1.0; self.dim()])
    }
}

/// Two scalar clients `f_1 = (x - A)^2`, `f_2 = (x + A)^2`; minimizer 0.
///
/// Every point of `(-A, A)` is stationary for the averaged exact sign.
#[derive(Debug, Clone, Copy)]
pub struct Counterexample {
    a: f64,
}

pub fn make_counterexample(a: f64) -> Result<Counterexample> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid("a", format!("must be a positive number, got {a}")));
    }
    Ok(Counterexample { a })
}

impl Counterexample {
    pub fn a(&self) -> f64 {
        self.a
    }

    fn center(&self, client: usize) -> f64 {
        if client == 0 {
            self.a
        } else {
            -self.a
        }
    }
}

impl Problem for Counterexample {
    fn dim(&self) -> usize {
        1
    }

    fn n_clients(&self) -> usize {
        2
    }

    fn client_objective(&self, client: usize, x: &[f64]) -> f64 {
        (x[0] - self.center(client)).powi(2)
    }

    fn client_gradient(&self, client: usize, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (x[0] - self.center(client));
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        Some((vec![0.0], self.a * self.a))
    }

    fn smoothness(&self) -> Option<Vec<f64>> {
        Some(vec![2.0])
    }
}

pub const LOGREG_L2: f64 = 1e-4;

/// Binary logistic regression with Dirichlet label skew across clients.
///
/// Client `i` draws its positive-label share `p_i ~ Beta(alpha, alpha)` (the
/// two-class symmetric Dirichlet) and receives `round(p_i * m)` positives.
/// Features are `y * mu + N(0, I)` with a shared mean direction `mu`.
#[derive(Debug, Clone)]
pub struct SyntheticLogReg {
    dim: usize,
    features: Vec<Vec<Vec<f64>>>,
    labels: Vec<Vec<f64>>,
    proportions: Vec<f64>,
}

pub fn make_synthetic_logreg(
    dim: usize,
    n_clients: usize,
    samples_per_client: usize,
    dirichlet_alpha: f64,
    seed: u64,
) -> Result<SyntheticLogReg> {
    if dim == 0 || n_clients == 0 || samples_per_client == 0 {
        return Err(invalid("dim", "dimension, clients and samples must be >= 1"));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
        return Err(invalid("dirichlet_alpha", "must be positive"));
    }
    let mut rng = seeded(seed, Purpose::ProblemData);
    let scale = 1.0 / (dim as f64).sqrt();
    let mu: Vec<f64> = (0..dim)
        .map(|_| 2.0 * scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let beta = Beta::new(dirichlet_alpha, dirichlet_alpha).map_err(|e| invalid("dirichlet_alpha", e.to_string()))?;

    let mut features = Vec::with_capacity(n_clients);
    let mut labels = Vec::with_capacity(n_clients);
    let mut proportions = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        let p: f64 = beta.sample(&mut rng);
        let positives = (p * samples_per_client as f64).round() as usize;
        let mut xs = Vec::with_capacity(samples_per_client);
        let mut ys = Vec::with_capacity(samples_per_client);
        for k in 0..samples_per_client {
            let y = if k < positives { 1.0 } else { -1.0 };
            xs.push(
                mu.iter()
                    .map(|m| y * m + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            ys.push(y);
        }
        features.push(xs);
        labels.push(ys);
        proportions.push(p);
    }
    Ok(SyntheticLogReg {
        dim,
        features,
        labels,
        proportions,
    })
}

impl SyntheticLogReg {
    /// Drawn positive-label share of each client.
    pub fn label_proportions(&self) -> &[f64] {
        &self.proportions
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Problem for SyntheticLogReg {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_clients(&self) -> usize {
        self.features.len()
    }

    fn client_objective(&self, client: usize, x: &[f64]) -> f64 {
        let xs = &self.features[client];
        let loss: f64 = xs
            .iter()
            .zip(&self.labels[client])
            .map(|(a, y)| softplus(-y * dot(a, x)))
            .sum::<f64>()
            / xs.len() as f64;
        loss + 0.5 * LOGREG_L2 * dot(x, x)
    }

    fn client_gradient(&self, client: usize, x: &[f64], out: &mut [f64]) {
        let xs = &self.features[client];
        let m = xs.len() as f64;
        for (o, w) in out.iter_mut().zip(x) {
            *o = LOGREG_L2 * w;
        }
        for (a, y) in xs.iter().zip(&self.labels[client]) {
            let coeff = -y * logistic(-y * dot(a, x)) / m;
            for (o, aj) in out.iter_mut().zip(a) {
                *o += coeff * aj;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serializable problem description, as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProblemSpec {
    Consensus {
        dim: usize,
        clients: usize,
        seed: u64,
    },
    Counterexample {
        a: f64,
    },
    SyntheticLogReg {
        dim: usize,
        clients: usize,
        samples_per_client: usize,
        dirichlet_alpha: f64,
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn Problem>> {
        Ok(match *self {
            ProblemSpec::Consensus { dim, clients, seed } => Box::new(make_consensus(dim, clients, seed)?),
            ProblemSpec::Counterexample { a } => Box::new(make_counterexample(a)?),
            ProblemSpec::SyntheticLogReg {
                dim,
                clients,
                samples_per_client,
                dirichlet_alpha,
                seed,
            } => Box::new(make_synthetic_logreg(
                dim,
                clients,
                samples_per_client,
                dirichlet_alpha,
                seed,
            )?),
        })
    }

    pub fn n_clients(&self) -> usize {
        match self {
            ProblemSpec::Consensus { clients, .. } | ProblemSpec::SyntheticLogReg { clients, .. } => *clients,
            ProblemSpec::Counterexample { .. } => 2,
        }
    }
}

/// Minibatch-gradient noise added on top of the exact client gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GradNoiseModel {
    None,
    /// `N(0, zeta^2 / d)` per coordinate, so the full-vector variance is `zeta^2`.
    Gaussian {
        zeta: f64,
    },
    /// The Gaussian model hard-clipped to `[-q_inf, q_inf]` per coordinate.
    TruncatedGaussian {
        zeta: f64,
        q_inf: f64,
    },
}

impl GradNoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradNoiseModel::None => Ok(()),
            GradNoiseModel::Gaussian { zeta } => check_nonneg("zeta", zeta),
            GradNoiseModel::TruncatedGaussian { zeta, q_inf } => {
                check_nonneg("zeta", zeta)?;
                check_nonneg("q_inf", q_inf)
            }
        }
    }
}

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and >= 0, got {v}")))
    }
}

/// Client `i`'s stochastic gradient at `x`.
pub fn minibatch_gradient<R: Rng + ?Sized>(
    problem: &dyn Problem,
    noise: &GradNoiseModel,
    client: usize,
    x: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    assert!(client < problem.n_clients(), "client index out of range");
    let mut g = vec![0.0; problem.dim()];
    problem.client_gradient(client, x, &mut g);
    let per_coord_sd = |zeta: f64| zeta / (problem.dim() as f64).sqrt();
    match *noise {
        GradNoiseModel::None => {}
        GradNoiseModel::Gaussian { zeta } => {
            let sd = per_coord_sd(zeta);
            for gj in g.iter_mut() {
                *gj += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        GradNoiseModel::TruncatedGaussian { zeta, q_inf } => {
            let sd = per_coord_sd(zeta);
            for gj in g.iter_mut() {
                *gj += (sd * rng.sample::<f64, _>(StandardNormal)).clamp(-q_inf, q_inf);
            }
        }
    }
    g
}
