use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safemarl::config::ExperimentConfig;
use safemarl::harness::{self, SweepAxis};
use safemarl::Error;

#[derive(Parser)]
#[command(name = "safemarl", version, about = "Primal-dual actor-critic for networked constrained MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics, checkpoint and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `output` in the config, then `runs/seed<N>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per axis value, plus `summary.csv`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["kappa", "eta_mu", "threshold"])]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run independent runs on several threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Oracle and invariant checks on built-in small instances.
    Verify,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericAbort { .. } | Error::NaN(_) | Error::Singular => 2,
        _ => 1,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => load(&config, seed).and_then(|cfg| {
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from(format!("runs/seed{}", cfg.seed)));
            let s = harness::run(&cfg, &out)?;
            println!(
                "{} iterations -> {}; final return {:.6}, final violation {:.6}",
                s.state.iter,
                out.display(),
                s.final_return,
                s.final_violation
            );
            Ok(())
        }),
        Command::Sweep { config, axis, values, replicates, seed, out, parallel } => load(&config, seed).and_then(|cfg| {
            let axis: SweepAxis = axis.parse()?;
            let values = harness::parse_values(&values)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from(format!("runs/sweep-{}", axis.name())));
            let rows = harness::sweep(&cfg, axis, &values, replicates, &out, parallel)?;
            println!("{} runs -> {}", rows.len(), out.join("summary.csv").display());
            Ok(())
        }),
        Command::Verify => {
            let checks = safemarl::verify::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}/{} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                return ExitCode::from(2);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
