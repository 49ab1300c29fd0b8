//! Experiment files: flat `key = value` configs, sweeps, repeats and output artifacts.
//!
//! ```text
//! schema_version = 1
//! name = consensus
//! output_dir = out/consensus
//! repeat = 10                  # seeds seed, seed+1, ..., seed+9
//! problem.kind = consensus     # consensus | counterexample | logreg
//! problem.dim = 10
//! problem.clients = 10
//! compressor.kind = stochastic_sign
//! compressor.z = 1             # positive integer or `inf`
//! sweep.compressor.sigma = 0.1, 0.3, 1
//! ```
//!
//! `preset = <name>` loads a built-in file first; later keys override it.
//! Every `sweep.<key>` lists override values; the cartesian product of all
//! sweep lists defines the run groups. Each run writes `<group>_seed<seed>.csv`
//! and the whole file produces one `summary.json`.
//!
//! With update dumping enabled, `<group>_seed<seed>.updates` holds one record
//! per received message: `u32 round, u32 client, u32 length` (little-endian)
//! followed by the serialized [`CompressedUpdate`](crate::compressors::CompressedUpdate).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::compressors::CompressorKind;
use crate::dp::{DpConfig, DP_PRESETS, DP_PRESET_CLIP};
use crate::error::{Error, Result};
use crate::fedsim::{to_csv, RunConfig, ServerLr, Simulation};
use crate::noise_math::{NoiseSpec, ZIndex};
use crate::problems::{GradNoiseModel, ProblemSpec};
use crate::tuning::{plateau_preset, PlateauConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable capping the number of concurrently executing runs.
pub const THREADS_ENV: &str = "SIGNFED_THREADS";

const KNOWN_KEYS: &[&str] = &[
    "schema_version",
    "name",
    "output_dir",
    "repeat",
    "preset",
    "seed",
    "init",
    "rounds",
    "local_steps",
    "participation",
    "client_lr",
    "server_lr",
    "problem.kind",
    "problem.dim",
    "problem.clients",
    "problem.seed",
    "problem.a",
    "problem.samples_per_client",
    "problem.dirichlet_alpha",
    "compressor.kind",
    "compressor.z",
    "compressor.sigma",
    "compressor.levels",
    "noise.kind",
    "noise.zeta",
    "noise.q_inf",
    "plateau.preset",
    "plateau.sigma_init",
    "plateau.sigma_bound",
    "plateau.patience",
    "plateau.beta",
    "plateau.rel_tol",
    "dp.preset",
    "dp.clip",
    "dp.noise_multiplier",
];

/// Keys that describe the file rather than a single run; not sweepable.
const FILE_KEYS: &[&str] = &["schema_version", "name", "output_dir", "repeat", "preset"];

fn config_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

type Entries = BTreeMap<String, String>;

fn parse_entries(text: &str, origin: &str) -> Result<Entries> {
    let mut out = Entries::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("{origin}:{}", lineno + 1), "expected `key = value`"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(config_err(format!("{origin}:{}", lineno + 1), "empty key"));
        }
        let base = key.strip_prefix("sweep.").unwrap_or(&key);
        if !KNOWN_KEYS.contains(&base) {
            return Err(config_err(key.clone(), "unknown key"));
        }
        if key.starts_with("sweep.") && FILE_KEYS.contains(&base) {
            return Err(config_err(key.clone(), "file-level keys cannot be swept"));
        }
        if out.insert(key.clone(), value).is_some() {
            return Err(config_err(key, "duplicate key"));
        }
    }
    Ok(out)
}

struct Fields<'a> {
    entries: &'a Entries,
}

impl<'a> Fields<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.entries.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&'a str> {
        self.raw(key).ok_or_else(|| config_err(key, "missing required key"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| config_err(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn needed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| config_err(key, "missing required key"))
    }
}

fn parse_problem(f: &Fields<'_>, run_seed: u64) -> Result<ProblemSpec> {
    let seed = f.or("problem.seed", run_seed)?;
    Ok(match f.require("problem.kind")? {
        "consensus" => ProblemSpec::Consensus {
            dim: f.needed("problem.dim")?,
            clients: f.or("problem.clients", 10)?,
            seed,
        },
        "counterexample" => ProblemSpec::Counterexample {
            a: f.or("problem.a", 1.0)?,
        },
        "logreg" => ProblemSpec::SyntheticLogReg {
            dim: f.needed("problem.dim")?,
            clients: f.or("problem.clients", 10)?,
            samples_per_client: f.or("problem.samples_per_client", 50)?,
            dirichlet_alpha: f.or("problem.dirichlet_alpha", 1.0)?,
            seed,
        },
        other => return Err(config_err("problem.kind", format!("unknown problem `{other}`"))),
    })
}

fn parse_compressor(f: &Fields<'_>) -> Result<CompressorKind> {
    Ok(match f.require("compressor.kind")? {
        "exact_sign" => CompressorKind::ExactSign,
        "stochastic_sign" => {
            let z: ZIndex = f
                .raw("compressor.z")
                .unwrap_or("1")
                .parse()
                .map_err(|e: Error| config_err("compressor.z", e.to_string()))?;
            let sigma = f.or("compressor.sigma", 0.0)?;
            CompressorKind::StochasticSign(
                NoiseSpec::new(z, sigma).map_err(|e| config_err("compressor.sigma", e.to_string()))?,
            )
        }
        "input_scaled_sign" => CompressorKind::InputScaledSign,
        "quantizer" => CompressorKind::UnbiasedQuantizer {
            levels: f.needed("compressor.levels")?,
        },
        "ef_sign" => CompressorKind::ErrorFeedbackSign,
        "identity" => CompressorKind::Identity,
        other => return Err(config_err("compressor.kind", format!("unknown compressor `{other}`"))),
    })
}

fn parse_noise(f: &Fields<'_>) -> Result<GradNoiseModel> {
    Ok(match f.raw("noise.kind").unwrap_or("none") {
        "none" => GradNoiseModel::None,
        "gaussian" => GradNoiseModel::Gaussian {
            zeta: f.needed("noise.zeta")?,
        },
        "truncated_gaussian" => GradNoiseModel::TruncatedGaussian {
            zeta: f.needed("noise.zeta")?,
            q_inf: f.needed("noise.q_inf")?,
        },
        other => return Err(config_err("noise.kind", format!("unknown noise model `{other}`"))),
    })
}

fn parse_plateau(f: &Fields<'_>) -> Result<Option<PlateauConfig>> {
    let base = match f.raw("plateau.preset") {
        Some(name) => {
            Some(plateau_preset(name).ok_or_else(|| config_err("plateau.preset", format!("unknown preset `{name}`")))?)
        }
        None => None,
    };
    let any_field = [
        "plateau.sigma_init",
        "plateau.sigma_bound",
        "plateau.patience",
        "plateau.beta",
        "plateau.rel_tol",
    ]
    .iter()
    .any(|k| f.raw(k).is_some());
    if base.is_none() && !any_field {
        return Ok(None);
    }
    let b = base.unwrap_or(PlateauConfig {
        sigma_init: f64::NAN,
        sigma_bound: f64::NAN,
        patience: 0,
        beta: f64::NAN,
        rel_tol: 0.0,
    });
    let cfg = PlateauConfig {
        sigma_init: f.or("plateau.sigma_init", b.sigma_init)?,
        sigma_bound: f.or("plateau.sigma_bound", b.sigma_bound)?,
        patience: f.or("plateau.patience", b.patience)?,
        beta: f.or("plateau.beta", b.beta)?,
        rel_tol: f.or("plateau.rel_tol", b.rel_tol)?,
    };
    cfg.validate().map_err(|e| config_err("plateau", e.to_string()))?;
    Ok(Some(cfg))
}

fn parse_dp(f: &Fields<'_>) -> Result<(Option<DpConfig>, Option<f64>)> {
    let preset = match f.raw("dp.preset") {
        Some(name) => Some(
            dp_preset_index(name)
                .map(|i| DP_PRESETS[i])
                .ok_or_else(|| config_err("dp.preset", format!("unknown preset `{name}`")))?,
        ),
        None => None,
    };
    if preset.is_none() && f.raw("dp.clip").is_none() && f.raw("dp.noise_multiplier").is_none() {
        return Ok((None, None));
    }
    let clip = f.or("dp.clip", preset.map(|_| DP_PRESET_CLIP).unwrap_or(f64::NAN))?;
    let mult = f.or("dp.noise_multiplier", preset.map(|p| p.noise_multiplier).unwrap_or(0.0))?;
    let dp = DpConfig::new(clip, mult).map_err(|e| config_err("dp", e.to_string()))?;
    Ok((Some(dp), preset.map(|p| p.server_lr_sign)))
}

fn dp_preset_index(name: &str) -> Option<usize> {
    DP_PRESET_NAMES.iter().position(|n| *n == name)
}

const DP_PRESET_NAMES: [&str; 6] = ["eps1", "eps2", "eps4", "eps6", "eps8", "eps10"];

/// Builds one run config from resolved entries.
fn run_config(entries: &Entries, run_seed: u64) -> Result<RunConfig> {
    let f = Fields { entries };
    let problem = parse_problem(&f, run_seed)?;
    let compressor = parse_compressor(&f)?;
    let (dp, dp_lr) = parse_dp(&f)?;
    let server_lr = match f.raw("server_lr") {
        None | Some("auto") => dp_lr.map(ServerLr::Explicit).unwrap_or(ServerLr::Auto),
        Some(v) => ServerLr::Explicit(
            v.parse()
                .map_err(|_| config_err("server_lr", format!("expected `auto` or a number, got `{v}`")))?,
        ),
    };
    let cfg = RunConfig {
        problem,
        init: f.or("init", 0.0)?,
        rounds: f.needed("rounds")?,
        local_steps: f.or("local_steps", 1)?,
        participation: f.or("participation", 1.0)?,
        client_lr: f.needed("client_lr")?,
        server_lr,
        compressor,
        noise: parse_noise(&f)?,
        plateau: parse_plateau(&f)?,
        seed: run_seed,
        dp,
    };
    cfg.validate().map_err(|e| match e {
        Error::InvalidParameter { name, reason } => config_err(name, reason),
        other => other,
    })?;
    Ok(cfg)
}

/// One sweep point: its overrides and resolved base config.
#[derive(Debug, Clone)]
pub struct RunGroup {
    pub name: String,
    pub overrides: Vec<(String, String)>,
    entries: Entries,
}

impl RunGroup {
    pub fn config(&self, seed: u64) -> Result<RunConfig> {
        run_config(&self.entries, seed)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentFile {
    pub name: String,
    pub output_dir: PathBuf,
    pub repeat: usize,
    pub base_seed: u64,
    pub groups: Vec<RunGroup>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut exp = Self::parse(&text, &path.display().to_string())?;
        if exp.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                exp.output_dir = parent.join(&exp.output_dir);
            }
        }
        Ok(exp)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let own = parse_entries(text, origin)?;
        let mut entries = match own.get("preset") {
            Some(name) => {
                let preset =
                    preset_text(name).ok_or_else(|| config_err("preset", format!("unknown preset `{name}`")))?;
                parse_entries(&preset, name)?
            }
            None => Entries::new(),
        };
        entries.extend(own);

        let f = Fields { entries: &entries };
        let version: u32 = f.needed("schema_version")?;
        if version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
            ));
        }
        let name = f.require("name")?.to_string();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(config_err("name", "must be a non-empty file-name-safe string"));
        }
        let output_dir = PathBuf::from(f.raw("output_dir").unwrap_or("out"));
        let repeat: usize = f.or("repeat", 1)?;
        if repeat == 0 {
            return Err(config_err("repeat", "must be >= 1"));
        }
        let base_seed: u64 = f.or("seed", 0)?;

        let (sweeps, base): (Entries, Entries) = entries.into_iter().partition(|(k, _)| k.starts_with("sweep."));
        let axes: Vec<(String, Vec<String>)> = sweeps
            .into_iter()
            .map(|(k, v)| {
                let key = k.trim_start_matches("sweep.").to_string();
                let values: Vec<String> = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if values.is_empty() {
                    return Err(config_err(k, "sweep needs at least one value"));
                }
                Ok((key, values))
            })
            .collect::<Result<_>>()?;

        let mut groups = vec![RunGroup {
            name: name.clone(),
            overrides: Vec::new(),
            entries: base,
        }];
        for (key, values) in &axes {
            let short = key.rsplit('.').next().unwrap_or(key);
            groups = groups
                .into_iter()
                .flat_map(|g| {
                    values.iter().map(move |v| {
                        let mut entries = g.entries.clone();
                        entries.insert(key.clone(), v.clone());
                        let mut overrides = g.overrides.clone();
                        overrides.push((key.clone(), v.clone()));
                        RunGroup {
                            name: format!("{}_{short}-{v}", g.name),
                            overrides,
                            entries,
                        }
                    })
                })
                .collect();
        }
        // Fail fast: every group must resolve to a valid config.
        for g in &groups {
            g.config(base_seed)?;
        }
        Ok(Self {
            name,
            output_dir,
            repeat,
            base_seed,
            groups,
        })
    }

    pub fn is_sweep(&self) -> bool {
        self.groups.iter().any(|g| !g.overrides.is_empty())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeat as u64).map(move |k| self.base_seed + k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub csv: String,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub name: String,
    pub overrides: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
    pub final_objective_mean: f64,
    /// Sample standard deviation across repeats (0 for a single run).
    pub final_objective_std: f64,
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub groups: Vec<GroupSummary>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub dump_updates: bool,
    /// Concurrent runs; `None` reads [`THREADS_ENV`], else uses all cores.
    pub threads: Option<usize>,
}

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Executes every `(group, seed)` run and writes CSVs plus `summary.json`.
///
/// Runs execute concurrently; the first failing run (in group, then seed
/// order) is reported after all runs finish.
pub fn execute(exp: &ExperimentFile, opts: RunOptions) -> Result<Summary> {
    fs::create_dir_all(&exp.output_dir)?;
    let jobs: Vec<(usize, u64)> = (0..exp.groups.len())
        .flat_map(|g| exp.seeds().map(move |s| (g, s)))
        .collect();

    let one = |&(g, seed): &(usize, u64)| -> Result<RunRecord> {
        let group = &exp.groups[g];
        let sim = Simulation::new(group.config(seed)?)?;
        let stem = format!("{}_seed{seed}", group.name);
        let output = if opts.dump_updates {
            let mut dump = Vec::new();
            let out = sim.run_observed(&mut |round, client, msg| {
                let bytes = msg.to_bytes();
                dump.extend_from_slice(&(round as u32).to_le_bytes());
                dump.extend_from_slice(&(client as u32).to_le_bytes());
                dump.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                dump.extend_from_slice(&bytes);
            })?;
            write_atomic(&exp.output_dir.join(format!("{stem}.updates")), &dump)?;
            out
        } else {
            sim.run()?
        };
        let csv = format!("{stem}.csv");
        write_atomic(&exp.output_dir.join(&csv), to_csv(&output.metrics).as_bytes())?;
        Ok(RunRecord {
            seed,
            csv,
            initial_objective: output.metrics[0].objective,
            final_objective: output.metrics.last().expect("at least one row").objective,
        })
    };

    let threads = opts.threads.or_else(threads_from_env).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err(THREADS_ENV, e.to_string()))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| jobs.par_iter().map(one).collect());

    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }

    let mut groups = Vec::with_capacity(exp.groups.len());
    for (g, chunk) in exp.groups.iter().zip(records.chunks(exp.repeat)) {
        let finals: Vec<f64> = chunk.iter().map(|r| r.final_objective).collect();
        let (mean, std) = mean_std(&finals);
        let f_star = g.config(exp.base_seed)?.problem.build()?.optimum().map(|(_, f)| f);
        groups.push(GroupSummary {
            name: g.name.clone(),
            overrides: g.overrides.iter().cloned().collect(),
            runs: chunk.to_vec(),
            final_objective_mean: mean,
            final_objective_std: std,
            f_star,
        });
    }
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        name: exp.name.clone(),
        groups,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.into()))?;
    write_atomic(&exp.output_dir.join("summary.json"), json.as_bytes())?;
    Ok(summary)
}

/// Names accepted by `preset = ...`.
pub fn preset_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "counterexample",
        "counterexample-uniform",
        "consensus",
        "consensus-mnist-analog",
        "consensus-emnist-analog",
        "consensus-cifar10-analog",
        "logreg",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(DP_PRESET_NAMES.iter().map(|e| format!("dp-{e}")));
    names
}

/// Full text of a built-in experiment file.
pub fn preset_text(name: &str) -> Option<String> {
    const CONSENSUS: &str = "\
schema_version = 1
problem.kind = consensus
problem.dim = 10
problem.clients = 10
problem.seed = 0
rounds = 2000
client_lr = 0.01
compressor.kind = stochastic_sign
compressor.z = 1
";
    let text = match name {
        "counterexample" => "\
schema_version = 1
name = counterexample
problem.kind = counterexample
problem.a = 1
init = 0.5
rounds = 1000
client_lr = 0.01
compressor.kind = exact_sign
"
        .to_string(),
        "counterexample-uniform" => "\
schema_version = 1
name = counterexample-uniform
problem.kind = counterexample
problem.a = 1
init = 0.5
rounds = 1000
client_lr = 0.01
compressor.kind = stochastic_sign
compressor.z = inf
compressor.sigma = 0.9
"
        .to_string(),
        "consensus" => format!("{CONSENSUS}name = consensus\ncompressor.sigma = 0.3\n"),
        "consensus-mnist-analog" => {
            format!("{CONSENSUS}name = consensus-mnist-analog\nplateau.preset = mnist-noniid\n")
        }
        "consensus-emnist-analog" => format!("{CONSENSUS}name = consensus-emnist-analog\nplateau.preset = emnist\n"),
        "consensus-cifar10-analog" => format!("{CONSENSUS}name = consensus-cifar10-analog\nplateau.preset = cifar10\n"),
        "logreg" => "\
schema_version = 1
name = logreg
problem.kind = logreg
problem.dim = 50
problem.clients = 10
problem.samples_per_client = 50
problem.dirichlet_alpha = 1
problem.seed = 0
rounds = 300
local_steps = 5
client_lr = 0.05
compressor.kind = stochastic_sign
compressor.z = 1
compressor.sigma = 0.05
"
        .to_string(),
        other => {
            let eps = other.strip_prefix("dp-")?;
            dp_preset_index(eps)?;
            format!(
                "\
schema_version = 1
name = dp-{eps}
problem.kind = logreg
problem.dim = 50
problem.clients = 20
problem.samples_per_client = 50
problem.dirichlet_alpha = 1
problem.seed = 0
participation = 0.5
rounds = 500
local_steps = 5
client_lr = 0.05
compressor.kind = exact_sign
dp.preset = {eps}
"
            )
        }
    };
    Some(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
schema_version = 1
name = t
problem.kind = consensus
problem.dim = 3
problem.clients = 4
rounds = 5
client_lr = 0.01
compressor.kind = stochastic_sign
compressor.z = inf
compressor.sigma = 0.5   # trailing comment
";

    #[test]
    fn parses_basic_file() {
        let exp = ExperimentFile::parse(BASIC, "t").unwrap();
        assert_eq!(exp.groups.len(), 1);
        assert!(!exp.is_sweep());
        let cfg = exp.groups[0].config(3).unwrap();
        assert_eq!(
            cfg.compressor,
            CompressorKind::StochasticSign(NoiseSpec {
                z: ZIndex::Infinity,
                sigma: 0.5
            })
        );
        assert_eq!(
            cfg.problem,
            ProblemSpec::Consensus {
                dim: 3,
                clients: 4,
                seed: 3
            }
        );
        assert_eq!(cfg.server_lr, ServerLr::Auto);
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            (BASIC.replace("rounds = 5", "rounds = five"), "rounds"),
            (BASIC.replace("client_lr = 0.01", "client_lr = -1"), "client_lr"),
            (format!("{BASIC}bogus.key = 1\n"), "bogus.key"),
            (
                BASIC.replace("schema_version = 1", "schema_version = 2"),
                "schema_version",
            ),
            (BASIC.replace("compressor.z = inf", "compressor.z = 0"), "compressor.z"),
            (format!("{BASIC}rounds = 6\n"), "rounds"),
            (format!("{BASIC}sweep.name = a, b\n"), "sweep.name"),
            (BASIC.replace("name = t\n", ""), "name"),
        ];
        for (text, field) in cases {
            match ExperimentFile::parse(&text, "t") {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error on {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn sweeps_expand_cartesian() {
        let text = format!("{BASIC}sweep.compressor.sigma = 0, 0.05, 0.1\nsweep.local_steps = 1, 2\n");
        let exp = ExperimentFile::parse(&text, "t").unwrap();
        assert!(exp.is_sweep());
        assert_eq!(exp.groups.len(), 6);
        assert_eq!(exp.groups[0].name, "t_sigma-0_local_steps-1");
        let sigmas: Vec<f64> = exp
            .groups
            .iter()
            .map(|g| g.config(0).unwrap().compressor.noise().unwrap().sigma)
            .collect();
        assert_eq!(sigmas, vec![0.0, 0.0, 0.05, 0.05, 0.1, 0.1]);
    }

    #[test]
    fn presets_resolve_and_override() {
        for name in preset_names() {
            let exp =
                ExperimentFile::parse(&format!("preset = {name}\n"), "t").unwrap_or_else(|e| panic!("{name}: {e}"));
            exp.groups[0].config(0).unwrap();
        }
        let exp = ExperimentFile::parse("preset = counterexample\nrounds = 7\n", "t").unwrap();
        let cfg = exp.groups[0].config(0).unwrap();
        assert_eq!(cfg.rounds, 7);
        assert_eq!(cfg.init, 0.5);
        let dp = ExperimentFile::parse("preset = dp-eps1\n", "t").unwrap().groups[0]
            .config(0)
            .unwrap();
        assert_eq!(dp.server_lr, ServerLr::Explicit(0.03));
        assert_eq!(dp.dp.unwrap().noise_multiplier, 2.77);
        let plateau = ExperimentFile::parse("preset = consensus-mnist-analog\n", "t")
            .unwrap()
            .groups[0]
            .config(0)
            .unwrap();
        assert_eq!(plateau.plateau.unwrap().patience, 30);
        assert!(ExperimentFile::parse("preset = nope\n", "t").is_err());
    }

    #[test]
    fn problem_seed_follows_run_seed_unless_pinned() {
        let exp = ExperimentFile::parse(BASIC, "t").unwrap();
        assert_ne!(
            exp.groups[0].config(1).unwrap().problem,
            exp.groups[0].config(2).unwrap().problem
        );
        let pinned = ExperimentFile::parse(&format!("{BASIC}problem.seed = 9\n"), "t").unwrap();
        assert_eq!(
            pinned.groups[0].config(1).unwrap().problem,
            pinned.groups[0].config(2).unwrap().problem
        );
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
