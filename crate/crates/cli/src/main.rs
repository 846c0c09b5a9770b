//! `pic`: run, simulate and diagnose PIC reserving models.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pic_core::config::{load_run_config, load_toml, SimulateConfig};
use pic_core::run::{diagnose_dir, execute_run, execute_simulate};

#[derive(Parser)]
#[command(name = "pic", version, about = "Bayesian paid-incurred-claims reserving")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write traces, diagnostics, reserves and a manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a synthetic triangle and its generating parameters.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute diagnostics from the traces of a finished run.
    Diagnose {
        dir: PathBuf,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Status {
    Ok,
    DiagnosticsFailed,
}

fn run(cli: Cli) -> Result<Status> {
    match cli.cmd {
        Command::Run { config, seed, chains, sweeps, out } => {
            let mut cfg = load_run_config(&config, std::env::vars())?;
            if let Some(s) = seed {
                cfg.sampler.seed = s;
            }
            if let Some(c) = chains {
                cfg.sampler.n_chains = c;
            }
            if let Some(n) = sweeps {
                cfg.sampler.n_sweeps = n;
            }
            if let Some(o) = out {
                cfg.data.output = o;
            }
            let outcome = execute_run(&cfg)?;
            println!("wrote {}", outcome.out_dir.display());
            if let Some(r) = &outcome.reserves {
                println!("total reserve: mean {:.2}, sd {:.2}", r.total.mean, r.total.sd);
            }
            let failed: Vec<&str> = outcome
                .diagnostics
                .iter()
                .flatten()
                .filter(|r| !r.pass)
                .map(|r| r.name.as_str())
                .collect();
            if failed.is_empty() {
                return Ok(Status::Ok);
            }
            eprintln!("diagnostics thresholds not met for: {}", failed.join(", "));
            Ok(if cfg.diagnostics.fail_on_threshold { Status::DiagnosticsFailed } else { Status::Ok })
        }
        Command::Simulate { config, seed, out } => {
            let mut cfg: SimulateConfig = load_toml(&config, std::env::vars())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            let dir = execute_simulate(&cfg)?;
            println!("wrote {}", dir.display());
            Ok(Status::Ok)
        }
        Command::Diagnose { dir, out } => {
            let (rows, csv) = diagnose_dir(&dir)?;
            match out {
                Some(p) => std::fs::write(&p, &csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(if rows.iter().all(|r| r.pass) { Status::Ok } else { Status::DiagnosticsFailed })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::DiagnosticsFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
