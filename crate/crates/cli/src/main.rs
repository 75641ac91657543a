use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ratlab_cli::{cmd_diagnose, cmd_eval, cmd_gen_data, cmd_grad_check, cmd_oracles, cmd_train, exit_code, GenSpec, RunConfig};

#[derive(Parser)]
#[command(name = "ratlab", version, about = "Train and diagnose extractor-predictor rationalization models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test JSONL splits and a manifest.
    GenData {
        /// Generator spec (JSON with a "kind" of "text" or "graph"). Defaults
        /// to the standard text corpus.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a game from a run config and write its run directory.
    Train {
        config: PathBuf,
    },
    /// Evaluate a trained run with deterministic masks.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write the degradation curve of a trained predictor.
    Diagnose {
        run_dir: PathBuf,
    },
    /// Run the numerical oracle checks.
    Oracles {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-difference check of every autodiff operation.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    GenSpec::from_json(&text).with_context(|| format!("in {}", path.display()))?
                }
                None => GenSpec::default(),
            };
            let manifest = cmd_gen_data(&spec, &out)?;
            for f in &manifest.files {
                println!("{} {} examples -> {}", f.split, f.examples, out.join(&f.path).display());
            }
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string(&outcome.test)?);
            println!("run directory: {}", outcome.run_dir.display());
        }
        Command::Eval { run_dir, split } => {
            let m = cmd_eval(&run_dir, &split)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Diagnose { run_dir } => {
            let curve = cmd_diagnose(&run_dir)?;
            print!("{}", curve.to_csv());
        }
        Command::Oracles { seed } => {
            let (reports, verdict) = cmd_oracles(seed);
            for r in &reports {
                println!("{}", r.summary());
                for line in &r.detail {
                    println!("    {line}");
                }
            }
            verdict?;
        }
        Command::GradCheck { seed, instances } => {
            let (reports, verdict) = cmd_grad_check(seed, instances)?;
            for r in &reports {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!("{:<16} {status} instances={} max_rel_error={:.3e}", r.op, r.instances, r.max_rel_error);
            }
            verdict?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
