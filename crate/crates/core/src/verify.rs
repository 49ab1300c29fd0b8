//! Runtime self-checks behind `signfed verify`.
//!
//! Checks that exercise the sign operator take it as a parameter, so a
//! deliberately broken operator can be shown to fail them.

use rand::Rng;

use crate::codec::{pack_bits, unpack_bits};
use crate::compressors::{quantize_with, sign, CompressorKind};
use crate::fedsim::{to_csv, RunConfig, Simulation};
use crate::noise_math::{eta, psi, NoiseSpec, ZIndex, ZSampler};
use crate::problems::ProblemSpec;
use crate::rng::{seeded, Purpose};

pub type SignOp = fn(f64) -> f64;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Monte Carlo draws per grid point.
    pub samples: usize,
    /// Tolerance multiplier for the Monte Carlo check, in standard errors.
    pub z_score: f64,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn full() -> Self {
        Self {
            samples: 200_000,
            z_score: 5.0,
            seed: 0,
        }
    }

    /// Ten times fewer draws. The tolerance is stated in standard errors, so
    /// it widens by `sqrt(10)` in absolute terms.
    pub fn fast() -> Self {
        Self {
            samples: 20_000,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

pub fn sign_at_zero(op: SignOp) -> CheckResult {
    let s = op(0.0);
    check("sign(0) = +1", s == 1.0, format!("sign(0) = {s}"))
}

/// `|x| - |x|^(2z+1) / (2(2z+1)) <= Psi_z(|x|) <= |x|` on `[0, 3]`.
pub fn psi_sandwich() -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    for z in 1..=5u32 {
        let p = (2 * z + 1) as f64;
        for k in 0..=300 {
            let x = 0.01 * k as f64;
            let v = psi(ZIndex::Finite(z), x);
            let lower = x - x.powf(p) / (2.0 * p);
            worst = worst.max(lower - v).max(v - x);
        }
    }
    check("Psi sandwich", worst <= 1e-10, format!("largest violation {worst:.3e}"))
}

/// `eta_z sigma E[op(x + sigma xi)]` against `sigma Psi_z(x / sigma)`.
pub fn mc_unbiasedness(op: SignOp, opts: &VerifyOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, Purpose::Verification);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for z in [ZIndex::Finite(1), ZIndex::Finite(2), ZIndex::Infinity] {
        let noise = ZSampler::new(z);
        for sigma in [1.0, 2.0] {
            for x in [-1.5, -0.5, 0.25, 1.0] {
                let mean = (0..opts.samples)
                    .map(|_| op(x + sigma * rng.sample(noise)))
                    .sum::<f64>()
                    / opts.samples as f64;
                let scale = eta(z) * sigma;
                let gap = (scale * mean - sigma * psi(z, x / sigma)).abs();
                let tol = opts.z_score * scale / (opts.samples as f64).sqrt();
                worst = worst.max(gap / tol);
                if gap > tol {
                    failures += 1;
                }
            }
        }
    }
    check(
        "Monte Carlo unbiasedness",
        failures == 0,
        format!("{failures} grid points outside tolerance, worst at {worst:.2}x tolerance"),
    )
}

/// Exact expectation of the quantizer by enumerating all rounding outcomes.
pub fn quantizer_enumeration(seed: u64) -> CheckResult {
    let mut rng = seeded(seed, Purpose::Verification);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for levels in [1u32, 2, 4] {
            let s = levels as f64;
            let up_prob: Vec<f64> = v
                .iter()
                .map(|x| {
                    let r = x.abs() / norm * s;
                    r - r.floor().min(s - 1.0)
                })
                .collect();
            let mut expectation = [0.0; 3];
            for outcome in 0..8u32 {
                let up = |i: usize| outcome >> i & 1 == 1;
                let weight: f64 = (0..3)
                    .map(|i| if up(i) { up_prob[i] } else { 1.0 - up_prob[i] })
                    .product();
                if weight == 0.0 {
                    continue;
                }
                let mut i = 0;
                let q = quantize_with(levels, &v, || {
                    let u = if up(i) { 0.0 } else { 1.0 - f64::EPSILON };
                    i += 1;
                    u
                })
                .expect("valid quantizer input");
                for (e, d) in expectation.iter_mut().zip(q.decode()) {
                    *e += weight * d;
                }
            }
            for (e, x) in expectation.iter().zip(&v) {
                worst = worst.max((e - x).abs());
            }
        }
    }
    check(
        "quantizer unbiasedness",
        worst <= 1e-12,
        format!("largest deviation {worst:.3e}"),
    )
}

pub fn codec_round_trip(op: SignOp, seed: u64) -> CheckResult {
    let mut rng = seeded(seed, Purpose::Verification);
    let mut bad = 0;
    for dim in 1..=129usize {
        let signs: Vec<f64> = (0..dim).map(|_| op(rng.random_range(-1.0..1.0))).collect();
        match unpack_bits(&pack_bits(&signs), dim) {
            Ok(back) if back == signs => {}
            _ => bad += 1,
        }
    }
    check("codec round trip", bad == 0, format!("{bad} of 129 dimensions failed"))
}

/// Exact signs leave the two-client instance where it started.
pub fn counterexample_stuck() -> CheckResult {
    let mut cfg = RunConfig::new(ProblemSpec::Counterexample { a: 1.0 }, CompressorKind::ExactSign);
    cfg.init = 0.5;
    cfg.rounds = 1000;
    match Simulation::new(cfg).and_then(|s| s.run()) {
        Ok(out) => {
            let x = out.final_x[0];
            check("counterexample stays put", x == 0.5, format!("x_T = {x}"))
        }
        Err(e) => check("counterexample stays put", false, e.to_string()),
    }
}

/// Same seed, different worker counts, identical CSV.
pub fn thread_determinism(seed: u64) -> CheckResult {
    let mut cfg = RunConfig::new(
        ProblemSpec::Consensus {
            dim: 10,
            clients: 10,
            seed,
        },
        CompressorKind::StochasticSign(NoiseSpec {
            z: ZIndex::Finite(1),
            sigma: 0.3,
        }),
    );
    cfg.rounds = 50;
    cfg.participation = 0.5;
    cfg.seed = seed;
    let csv = |threads| {
        Simulation::new(cfg.clone())
            .and_then(|s| s.with_threads(threads).run())
            .map(|o| to_csv(&o.metrics))
    };
    match (csv(1), csv(4)) {
        (Ok(a), Ok(b)) => check(
            "thread-count determinism",
            a == b,
            format!("{} bytes compared", a.len()),
        ),
        (Err(e), _) | (_, Err(e)) => check("thread-count determinism", false, e.to_string()),
    }
}

pub fn run_checks_with(op: SignOp, opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        sign_at_zero(op),
        psi_sandwich(),
        mc_unbiasedness(op, opts),
        quantizer_enumeration(opts.seed),
        codec_round_trip(op, opts.seed),
        counterexample_stuck(),
        thread_determinism(opts.seed),
    ]
}

pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckResult> {
    run_checks_with(sign, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_zero_negative(x: f64) -> f64 {
        if x > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    fn sign_biased(x: f64) -> f64 {
        sign(x - 0.1)
    }

    #[test]
    fn all_checks_pass_with_the_real_operator() {
        for r in run_checks(&VerifyOptions::fast()) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn mutated_operators_are_caught() {
        assert!(!sign_at_zero(sign_zero_negative).passed);
        assert!(!mc_unbiasedness(sign_biased, &VerifyOptions::fast()).passed);
        let zero_at_zero: SignOp = |x| if x == 0.0 { 0.0 } else { sign(x) };
        assert!(!sign_at_zero(zero_at_zero).passed);
    }

    #[test]
    fn fast_mode_widens_absolute_tolerance() {
        let full = VerifyOptions::full();
        let fast = VerifyOptions::fast();
        assert_eq!(full.samples, 10 * fast.samples);
        let ratio = (full.samples as f64 / fast.samples as f64).sqrt();
        assert!((ratio - 10f64.sqrt()).abs() < 1e-12);
    }
}
