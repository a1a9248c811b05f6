use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridfv::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hybridfv", version, about = "Hybrid finite-volume solver with trainable corrections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Converged solve of the configured plant and correction.
    Solve(Io),
    /// Twin experiment: solve with a known correction and write observations.
    Twin(Io),
    /// Optimize the correction against measured data.
    Assimilate(Io),
    /// Train the eddy-viscosity network on a dataset.
    Train(Io),
    /// Finite-difference check of the configured objective's gradient.
    Checkgrad(Io),
    /// Generate a dataset of converged turbulence-model solves.
    GenDataset(Io),
}

fn run(cli: Cli) -> hybridfv::Result<String> {
    let (io, name) = match &cli.command {
        Command::Solve(io) => (io, "solve"),
        Command::Twin(io) => (io, "twin"),
        Command::Assimilate(io) => (io, "assimilate"),
        Command::Train(io) => (io, "train"),
        Command::Checkgrad(io) => (io, "checkgrad"),
        Command::GenDataset(io) => (io, "gen-dataset"),
    };
    let cfg = ExperimentConfig::load(&io.config)?;
    let out = &io.out;
    let summary = match cli.command {
        Command::Solve(_) => {
            let r = harness::cmd_solve(&cfg, out)?;
            format!("converged in {} iterations, residual {:e}", r.iterations, r.final_residual())
        }
        Command::Twin(_) => {
            let r = harness::cmd_twin(&cfg, out)?;
            format!("truth solve converged in {} iterations, {} observations", r.solve.iterations, r.observations.y.len())
        }
        Command::Assimilate(_) => {
            let r = harness::cmd_assimilate(&cfg, out)?;
            let mut s = format!(
                "{} iterations, loss {:e} -> {:e}",
                r.result.history.len() - 1,
                r.result.history[0].loss,
                r.result.loss
            );
            if let Some(e) = r.relative_error {
                s += &format!(", relative error {e:e}");
            }
            s
        }
        Command::Train(_) => {
            let r = harness::cmd_train(&cfg, out)?;
            let best = r.members.iter().map(|m| m.train_normalized).fold(f64::INFINITY, f64::min);
            format!("{} members, best normalized training loss {best:e}", r.members.len())
        }
        Command::Checkgrad(_) => {
            let r = harness::cmd_checkgrad(&cfg, out)?;
            format!("max relative error {:e}", r.max_rel_error)
        }
        Command::GenDataset(_) => {
            let r = harness::cmd_gen_dataset(&cfg, out)?;
            format!("{} samples, {} skipped", r.samples.len(), r.skipped.len())
        }
    };
    Ok(format!("{name}: {summary}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => {
            println!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
