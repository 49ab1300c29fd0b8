use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use signfed::experiment::{self, ExperimentFile, RunOptions, Summary};
use signfed::verify::{self, VerifyOptions};
use signfed::Error;

/// Sign-compressed federated optimization simulator.
#[derive(Parser)]
#[command(name = "signfed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration in an experiment file.
    Run {
        file: PathBuf,
        /// Also write every received client message to `<run>.updates`.
        #[arg(long)]
        dump_updates: bool,
    },
    /// Like `run`, but require the file to declare at least one `sweep.*` key.
    Sweep {
        file: PathBuf,
        #[arg(long)]
        dump_updates: bool,
    },
    /// Run the built-in numerical self-checks.
    Verify {
        /// Ten times fewer Monte Carlo draws.
        #[arg(long)]
        fast: bool,
    },
    /// Print a built-in experiment file, or list them.
    Preset { name: Option<String> },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::InvalidParameter { .. }) => 2,
        Some(Error::Diverged { .. } | Error::NonFiniteGradient { .. }) => 3,
        _ => 1,
    }
}

fn print_summary(summary: &Summary, dir: &std::path::Path) {
    for g in &summary.groups {
        let gap = g
            .f_star
            .map(|f| format!("  f-f* {:.6e}", g.final_objective_mean - f))
            .unwrap_or_default();
        println!(
            "{:<40} runs {:>3}  final f {:.6e} +- {:.2e}{gap}",
            g.name,
            g.runs.len(),
            g.final_objective_mean,
            g.final_objective_std
        );
    }
    println!("wrote {}", dir.join("summary.json").display());
}

fn run_file(file: &Path, dump_updates: bool, require_sweep: bool) -> anyhow::Result<()> {
    let exp = ExperimentFile::load(file).with_context(|| format!("loading {}", file.display()))?;
    if require_sweep && !exp.is_sweep() {
        return Err(Error::Config {
            field: "sweep".into(),
            reason: "no sweep.* keys in this file; use `run`".into(),
        }
        .into());
    }
    let summary = experiment::execute(
        &exp,
        RunOptions {
            dump_updates,
            threads: None,
        },
    )?;
    print_summary(&summary, &exp.output_dir);
    Ok(())
}

fn verify_cmd(fast: bool) -> anyhow::Result<bool> {
    let opts = if fast {
        VerifyOptions::fast()
    } else {
        VerifyOptions::full()
    };
    let results = verify::run_checks(&opts);
    for r in &results {
        println!("{} {:<28} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { file, dump_updates } => run_file(file, *dump_updates, false).map(|_| true),
        Command::Sweep { file, dump_updates } => run_file(file, *dump_updates, true).map(|_| true),
        Command::Verify { fast } => verify_cmd(*fast),
        Command::Preset { name: None } => {
            experiment::preset_names().iter().for_each(|n| println!("{n}"));
            Ok(true)
        }
        Command::Preset { name: Some(name) } => match experiment::preset_text(name) {
            Some(text) => {
                print!("{text}");
                Ok(true)
            }
            None => Err(Error::Config {
                field: "preset".into(),
                reason: format!("unknown preset `{name}`"),
            }
            .into()),
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
