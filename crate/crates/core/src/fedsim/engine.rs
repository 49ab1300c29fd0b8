use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::RoundMetrics;
use crate::compressors::{compress, uplink_bits, CompressedUpdate, CompressorKind, EfState};
use crate::dp::{dp_compress, DpConfig};
use crate::error::{invalid, Error, Result};
use crate::noise_math::{eta, NoiseSpec};
use crate::problems::{minibatch_gradient, GradNoiseModel, Problem, ProblemSpec};
use crate::rng::{stream, Purpose, SERVER};
use crate::tuning::{PlateauConfig, PlateauState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ServerLr {
    /// `eta_z * sigma` for stochastic signs (and `eta_1 * sigma_dp * C` for DP); 1 otherwise.
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// Every coordinate of the starting point.
    pub init: f64,
    pub rounds: usize,
    pub local_steps: usize,
    pub participation: f64,
    pub client_lr: f64,
    pub server_lr: ServerLr,
    pub compressor: CompressorKind,
    pub noise: GradNoiseModel,
    pub plateau: Option<PlateauConfig>,
    pub seed: u64,
    pub dp: Option<DpConfig>,
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, compressor: CompressorKind) -> Self {
        Self {
            problem,
            init: 0.0,
            rounds: 100,
            local_steps: 1,
            participation: 1.0,
            client_lr: 0.01,
            server_lr: ServerLr::Auto,
            compressor,
            noise: GradNoiseModel::None,
            plateau: None,
            seed: 0,
            dp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be >= 1"));
        }
        if self.local_steps == 0 {
            return Err(invalid("local_steps", "must be >= 1"));
        }
        if !(self.client_lr > 0.0 && self.client_lr.is_finite()) {
            return Err(invalid("client_lr", "must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(invalid("participation", "must lie in (0, 1]"));
        }
        if !self.init.is_finite() {
            return Err(invalid("init", "must be finite"));
        }
        if let ServerLr::Explicit(lr) = self.server_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid("server_lr", "must be positive"));
            }
        }
        self.compressor.validate()?;
        self.noise.validate()?;
        if let Some(p) = &self.plateau {
            p.validate()?;
            if !matches!(self.compressor, CompressorKind::StochasticSign(_)) {
                return Err(invalid(
                    "plateau",
                    "the plateau schedule drives a stochastic-sign compressor",
                ));
            }
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
            if self.plateau.is_some() {
                return Err(invalid("dp", "DP runs use a fixed noise multiplier"));
            }
        }
        Ok(())
    }

    /// Clients contacted per round, `ceil(q n)`.
    pub fn clients_per_round(&self) -> usize {
        let n = self.problem.n_clients();
        ((self.participation * n as f64).ceil() as usize).clamp(1, n)
    }

    /// Uplink cost of one client message.
    pub fn message_bits(&self, dim: usize) -> u64 {
        if self.dp.is_some() {
            dim as u64
        } else {
            uplink_bits(&self.compressor, dim)
        }
    }
}

/// Accumulated local update `sum_s g_s` after `local_steps` SGD steps from `x_start`.
///
/// Equals `(x_start - x_E) / lr`, the quantity the compressor sees.
pub fn local_update<R: rand::Rng + ?Sized>(
    problem: &dyn Problem,
    noise: &GradNoiseModel,
    client: usize,
    x_start: &[f64],
    local_steps: usize,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if local_steps == 0 {
        return Err(invalid("local_steps", "must be >= 1"));
    }
    let mut x = x_start.to_vec();
    let mut acc = vec![0.0; x.len()];
    for step in 0..local_steps {
        let g = minibatch_gradient(problem, noise, client, &x, rng);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { client, step });
        }
        for ((a, xi), gi) in acc.iter_mut().zip(x.iter_mut()).zip(&g) {
            *a += gi;
            *xi -= lr * gi;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_x: Vec<f64>,
}

/// Observer for every message the server receives: `(round, client, message)`.
pub type UpdateSink<'a> = dyn FnMut(usize, usize, &CompressedUpdate) + Send + 'a;

pub struct Simulation {
    config: RunConfig,
    problem: Box<dyn Problem>,
    threads: usize,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.problem.build()?;
        Ok(Self {
            config,
            problem,
            threads: 1,
        })
    }

    /// Worker threads for per-client work inside a round. Results do not depend on it.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn problem(&self) -> &dyn Problem {
        self.problem.as_ref()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(&self) -> Result<RunOutput> {
        self.run_observed(&mut |_, _, _| {})
    }

    pub fn run_observed(&self, sink: &mut UpdateSink<'_>) -> Result<RunOutput> {
        if self.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
                .map_err(|e| invalid("threads", e.to_string()))?;
            pool.install(|| self.execute(sink))
        } else {
            self.execute(sink)
        }
    }

    fn base_sigma(&self) -> f64 {
        match (&self.config.plateau, self.config.compressor, &self.config.dp) {
            (_, _, Some(dp)) => dp.noise_spec().sigma,
            (Some(p), _, _) => p.sigma_init,
            (None, CompressorKind::StochasticSign(spec), _) => spec.sigma,
            _ => 0.0,
        }
    }

    fn server_lr(&self, sigma: f64) -> f64 {
        match self.config.server_lr {
            ServerLr::Explicit(lr) => lr,
            ServerLr::Auto => match (&self.config.dp, self.config.compressor) {
                (Some(dp), _) if dp.noise_multiplier > 0.0 => eta(dp.noise_spec().z) * sigma,
                (None, CompressorKind::StochasticSign(spec)) if sigma > 0.0 => eta(spec.z) * sigma,
                _ => 1.0,
            },
        }
    }

    fn execute(&self, sink: &mut UpdateSink<'_>) -> Result<RunOutput> {
        let cfg = &self.config;
        let problem = self.problem.as_ref();
        let dim = problem.dim();
        let n = problem.n_clients();
        let per_round = cfg.clients_per_round();
        let message_bits = cfg.message_bits(dim);

        let mut x = vec![cfg.init; dim];
        let mut ef: Vec<Option<EfState>> = match cfg.compressor {
            CompressorKind::ErrorFeedbackSign if cfg.dp.is_none() => (0..n).map(|_| Some(EfState::new(dim))).collect(),
            _ => vec![None; n],
        };
        let mut plateau = cfg.plateau.as_ref().map(PlateauState::new);
        let mut sigma = self.base_sigma();

        let f0 = problem.objective(&x);
        let guard = 1e6 * f0.abs() + 1e6;
        let mut grad_sq = norm_sq(&problem.full_gradient(&x));
        let mut grad_sq_sum = 0.0;
        let mut bits = 0u64;

        let mut metrics = Vec::with_capacity(cfg.rounds + 1);
        metrics.push(RoundMetrics {
            round: 0,
            objective: f0,
            grad_norm_sq: grad_sq,
            avg_local_grad_sq: 0.0,
            uplink_bits: 0,
            sigma,
        });

        for round in 1..=cfg.rounds {
            let kind = match cfg.compressor {
                CompressorKind::StochasticSign(spec) => CompressorKind::StochasticSign(NoiseSpec { sigma, ..spec }),
                other => other,
            };

            let mut picked = index::sample(
                &mut stream(cfg.seed, round as u64, SERVER, Purpose::ClientSampling),
                n,
                per_round,
            )
            .into_vec();
            picked.sort_unstable();

            let jobs: Vec<(usize, Option<EfState>)> = picked.iter().map(|&i| (i, ef[i].take())).collect();
            let client_work =
                |(i, mut state): (usize, Option<EfState>)| -> Result<(usize, CompressedUpdate, Option<EfState>)> {
                    let mut grad_rng = stream(cfg.seed, round as u64, i as u64, Purpose::Gradient);
                    let acc = local_update(
                        problem,
                        &cfg.noise,
                        i,
                        &x,
                        cfg.local_steps,
                        cfg.client_lr,
                        &mut grad_rng,
                    )?;
                    let mut rng = stream(cfg.seed, round as u64, i as u64, Purpose::Compression);
                    let msg = match &cfg.dp {
                        Some(dp) => {
                            let delta: Vec<f64> = acc.iter().map(|a| cfg.client_lr * a).collect();
                            dp_compress(&delta, dp, &mut rng)?
                        }
                        None => compress(&kind, &acc, &mut rng, state.as_mut())?,
                    };
                    Ok((i, msg, state))
                };
            let results: Vec<Result<_>> = if self.threads > 1 {
                jobs.into_par_iter().map(client_work).collect()
            } else {
                jobs.into_iter().map(client_work).collect()
            };

            // Aggregate in client-index order.
            let mut sum = vec![0.0; dim];
            let mut decoded = vec![0.0; dim];
            for r in results {
                let (i, msg, state) = r?;
                sink(round, i, &msg);
                msg.decode_into(&mut decoded);
                for (s, d) in sum.iter_mut().zip(&decoded) {
                    *s += d;
                }
                ef[i] = state;
            }

            let step = if cfg.dp.is_some() {
                self.server_lr(sigma)
            } else {
                self.server_lr(sigma) * cfg.client_lr
            } / per_round as f64;
            for (xi, s) in x.iter_mut().zip(&sum) {
                *xi -= step * s;
            }

            grad_sq_sum += grad_sq;
            let objective = problem.objective(&x);
            if !objective.is_finite() || objective > guard {
                return Err(Error::Diverged { round, objective });
            }
            grad_sq = norm_sq(&problem.full_gradient(&x));
            bits += per_round as u64 * message_bits;
            metrics.push(RoundMetrics {
                round,
                objective,
                grad_norm_sq: grad_sq,
                avg_local_grad_sq: grad_sq_sum / round as f64,
                uplink_bits: bits,
                sigma,
            });

            if let (Some(state), Some(pc)) = (plateau.as_mut(), cfg.plateau.as_ref()) {
                state.observe(pc, objective);
                sigma = state.sigma();
            }
        }

        Ok(RunOutput { metrics, final_x: x })
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Builds and runs a simulation on the calling thread.
pub fn run(config: RunConfig) -> Result<RunOutput> {
    Simulation::new(config)?.run()
}
