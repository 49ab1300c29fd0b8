use signfed::compressors::{uplink_bits, CompressorKind};
use signfed::dp::DpConfig;
use signfed::fedsim::{
    convergence_bound, local_update, run, sigma_threshold_inf, to_csv, BoundParams, RunConfig, ServerLr, Simulation,
};
use signfed::noise_math::{NoiseSpec, TheoryConstants, ZIndex};
use signfed::problems::{make_consensus, Consensus, GradNoiseModel, Problem, ProblemSpec};
use signfed::rng::{seeded, Purpose};
use signfed::Error;

fn stochastic(z: ZIndex, sigma: f64) -> CompressorKind {
    CompressorKind::StochasticSign(NoiseSpec { z, sigma })
}

fn counterexample(kind: CompressorKind, init: f64, rounds: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(ProblemSpec::Counterexample { a: 1.0 }, kind);
    c.init = init;
    c.rounds = rounds;
    c.seed = seed;
    c
}

fn consensus_gap(dim: usize, kind: CompressorKind, seed: u64) -> f64 {
    let spec = ProblemSpec::Consensus { dim, clients: 10, seed };
    let f_star = spec.build().unwrap().optimum().unwrap().1;
    let mut c = RunConfig::new(spec, kind);
    c.rounds = 2000;
    c.seed = seed;
    run(c).unwrap().metrics.last().unwrap().objective - f_star
}

#[test]
fn local_update_examples() {
    let p = Consensus::from_targets(vec![vec![0.0]]).unwrap();
    let mut rng = seeded(0, Purpose::Gradient);
    let acc = local_update(&p, &GradNoiseModel::None, 0, &[1.0], 2, 0.1, &mut rng).unwrap();
    assert!((acc[0] - 1.9).abs() < 1e-15);

    let q = make_consensus(5, 3, 4).unwrap();
    let x = [0.3, -0.2, 1.0, 0.0, 2.0];
    let mut g = vec![0.0; 5];
    q.client_gradient(1, &x, &mut g);
    for lr in [1e-3, 0.5, 7.0] {
        assert_eq!(
            local_update(&q, &GradNoiseModel::None, 1, &x, 1, lr, &mut rng).unwrap(),
            g
        );
    }
    assert!(local_update(&q, &GradNoiseModel::None, 1, &x, 0, 0.1, &mut rng).is_err());
}

#[test]
fn non_finite_gradients_abort() {
    let p = Consensus::from_targets(vec![vec![f64::NAN]]).unwrap();
    let mut rng = seeded(0, Purpose::Gradient);
    let err = local_update(&p, &GradNoiseModel::None, 0, &[1.0], 1, 0.1, &mut rng).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { client: 0, step: 0 }));
}

#[test]
fn exact_sign_never_moves_on_the_counterexample() {
    let out = run(counterexample(CompressorKind::ExactSign, 0.5, 200, 0)).unwrap();
    assert_eq!(out.final_x, vec![0.5]);
    assert!(out.metrics.iter().all(|m| m.objective == out.metrics[0].objective));
}

#[test]
fn every_interior_start_is_a_fixed_point_of_exact_sign() {
    for k in 1..1000 {
        let x0 = -1.0 + 2.0 * k as f64 / 1000.0;
        let out = run(counterexample(CompressorKind::ExactSign, x0, 1, 0)).unwrap();
        assert_eq!(out.final_x[0], x0);
    }
}

#[test]
fn uniform_noise_below_threshold_is_stuck() {
    // Smaller client gradient magnitude at x0 = 0.5 is A = 1.
    let threshold = sigma_threshold_inf(1, 1.0, 0.0);
    for seed in 0..10 {
        let out = run(counterexample(
            stochastic(ZIndex::Infinity, 0.9 * threshold),
            0.5,
            1000,
            seed,
        ))
        .unwrap();
        assert_eq!(out.final_x, vec![0.5]);
    }
}

#[test]
fn uniform_noise_above_threshold_converges() {
    let threshold = sigma_threshold_inf(1, 1.0, 0.0);
    let converged = (0..10)
        .filter(|&seed| {
            let out = run(counterexample(
                stochastic(ZIndex::Infinity, 2.0 * threshold),
                0.5,
                2000,
                seed,
            ))
            .unwrap();
            out.final_x[0].abs() < 0.05
        })
        .count();
    assert!(converged >= 9, "{converged}/10");
}

#[test]
fn identity_with_one_client_is_gradient_descent() {
    let p = make_consensus(4, 1, 11).unwrap();
    let mut cfg = RunConfig::new(
        ProblemSpec::Consensus {
            dim: 4,
            clients: 1,
            seed: 11,
        },
        CompressorKind::Identity,
    );
    cfg.rounds = 50;
    cfg.client_lr = 0.1;
    cfg.init = 0.25;
    cfg.server_lr = ServerLr::Explicit(1.0);
    let out = run(cfg).unwrap();

    let mut x = vec![0.25; 4];
    let y = &p.targets()[0];
    for t in 1..=50 {
        for (xi, yi) in x.iter_mut().zip(y) {
            *xi -= 0.1 * (*xi - yi);
        }
        let f = 0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((out.metrics[t].objective - f).abs() < 1e-14);
    }
    for (a, b) in out.final_x.iter().zip(&x) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = ProblemSpec::SyntheticLogReg {
        dim: 12,
        clients: 8,
        samples_per_client: 20,
        dirichlet_alpha: 0.5,
        seed: 3,
    };
    let kinds = [
        stochastic(ZIndex::Finite(2), 0.2),
        CompressorKind::ErrorFeedbackSign,
        CompressorKind::UnbiasedQuantizer { levels: 4 },
    ];
    for kind in kinds {
        let mut cfg = RunConfig::new(spec.clone(), kind);
        cfg.rounds = 30;
        cfg.local_steps = 3;
        cfg.participation = 0.6;
        cfg.noise = GradNoiseModel::Gaussian { zeta: 0.1 };
        cfg.seed = 21;
        let csvs: Vec<String> = [1, 2, 5]
            .iter()
            .map(|&t| {
                to_csv(
                    &Simulation::new(cfg.clone())
                        .unwrap()
                        .with_threads(t)
                        .run()
                        .unwrap()
                        .metrics,
                )
            })
            .collect();
        assert_eq!(csvs[0], csvs[1]);
        assert_eq!(csvs[0], csvs[2]);
    }
}

#[test]
fn uplink_bits_are_exact() {
    let spec = ProblemSpec::Consensus {
        dim: 13,
        clients: 7,
        seed: 0,
    };
    let kinds = [
        CompressorKind::ExactSign,
        stochastic(ZIndex::Finite(1), 0.5),
        CompressorKind::InputScaledSign,
        CompressorKind::ErrorFeedbackSign,
        CompressorKind::UnbiasedQuantizer { levels: 3 },
        CompressorKind::Identity,
    ];
    for kind in kinds {
        for q in [1.0, 0.5, 0.1] {
            let mut cfg = RunConfig::new(spec.clone(), kind);
            cfg.rounds = 17;
            cfg.participation = q;
            let per_round = (q * 7.0f64).ceil() as u64;
            let out = run(cfg).unwrap();
            for m in &out.metrics {
                assert_eq!(m.uplink_bits, m.round as u64 * per_round * uplink_bits(&kind, 13));
            }
        }
    }
}

#[test]
fn dp_runs_charge_one_bit_per_coordinate() {
    let mut cfg = RunConfig::new(
        ProblemSpec::Consensus {
            dim: 9,
            clients: 4,
            seed: 0,
        },
        CompressorKind::ExactSign,
    );
    cfg.dp = Some(DpConfig::new(0.01, 1.0).unwrap());
    cfg.rounds = 5;
    cfg.participation = 0.5;
    let out = run(cfg).unwrap();
    assert_eq!(out.metrics[5].uplink_bits, 5 * 2 * 9);
}

#[test]
fn divergence_is_reported() {
    let mut cfg = RunConfig::new(
        ProblemSpec::Consensus {
            dim: 3,
            clients: 2,
            seed: 0,
        },
        CompressorKind::Identity,
    );
    cfg.client_lr = 5.0;
    cfg.rounds = 100;
    assert!(matches!(run(cfg), Err(Error::Diverged { .. })));
}

#[test]
fn consensus_ordering() {
    for seed in 0..3 {
        let exact = consensus_gap(10, CompressorKind::ExactSign, seed);
        let gd = consensus_gap(10, CompressorKind::Identity, seed);
        let best = |z| {
            [0.1, 0.3, 1.0]
                .iter()
                .map(|&s| consensus_gap(10, stochastic(z, s), seed))
                .fold(f64::INFINITY, f64::min)
        };
        let (z1, zinf) = (best(ZIndex::Finite(1)), best(ZIndex::Infinity));
        assert!(gd < z1 && gd < zinf);
        assert!(
            z1 < 0.5 * exact && zinf < 0.75 * exact,
            "seed {seed}: {z1} {zinf} {exact}"
        );
    }
}

#[test]
fn realized_gradient_norm_respects_the_bound() {
    let (dim, clients, seed) = (10, 10, 5);
    let problem = make_consensus(dim, clients, seed).unwrap();
    let mut cfg = RunConfig::new(
        ProblemSpec::Consensus { dim, clients, seed },
        stochastic(ZIndex::Finite(1), 1.0),
    );
    cfg.rounds = 500;
    cfg.seed = seed;
    let out = run(cfg).unwrap();

    let x0 = vec![0.0; dim];
    let grad_bound = problem
        .targets()
        .iter()
        .flat_map(|y| [&x0, &out.final_x].map(|x| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        .fold(0.0, f64::max)
        * 2.0;
    let constants = TheoryConstants::new(
        problem.smoothness().unwrap(),
        0.0,
        grad_bound,
        0.0,
        0.0,
        problem.optimum().unwrap().1,
        problem.objective(&x0),
    )
    .unwrap();
    let params = BoundParams {
        rounds: 500,
        local_steps: 1,
        clients,
        client_lr: 0.01,
        sigma: 1.0,
        z: 1,
        dim,
    };
    let bound = convergence_bound(&constants, &params).unwrap();
    let realized = out.metrics.last().unwrap().avg_local_grad_sq;
    assert!(realized <= bound, "{realized} > {bound}");
}

#[test]
fn more_local_steps_reach_the_target_sooner() {
    let mut rounds_e5 = Vec::new();
    let mut rounds_e1 = Vec::new();
    for seed in 0..5 {
        let spec = ProblemSpec::SyntheticLogReg {
            dim: 50,
            clients: 10,
            samples_per_client: 50,
            dirichlet_alpha: 1.0,
            seed,
        };
        let curve = |e: usize| {
            let mut c = RunConfig::new(spec.clone(), stochastic(ZIndex::Finite(1), 0.1));
            c.rounds = 200;
            c.local_steps = e;
            c.client_lr = 0.05;
            c.seed = seed;
            run(c).unwrap().metrics.iter().map(|m| m.objective).collect::<Vec<_>>()
        };
        let (one, five) = (curve(1), curve(5));
        let target = one[200];
        rounds_e1.push(one.iter().position(|f| *f <= target).unwrap());
        rounds_e5.push(five.iter().position(|f| *f <= target).unwrap_or(usize::MAX));
    }
    rounds_e1.sort_unstable();
    rounds_e5.sort_unstable();
    assert!(rounds_e5[2] < rounds_e1[2], "{rounds_e5:?} vs {rounds_e1:?}");
}
