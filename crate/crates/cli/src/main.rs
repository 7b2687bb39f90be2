use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

use commands::{BalanceArgs, QbdArgs, ScalabilityArgs, SimulateArgs};
use manifest::Manifest;

/// Experiments for the All-Path family of bridging protocols.
#[derive(Debug, Parser)]
#[command(name = "allpath", version, about)]
struct Cli {
    /// Directory for output files.
    #[arg(long, short, env = "ALLPATH_OUT", default_value = ".", global = true)]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a packet-level protocol simulation.
    Simulate(SimulateArgs),
    /// Path and table-size counts over a grid sweep.
    Scalability(ScalabilityArgs),
    /// Solve the two-path Markov chain.
    Qbd(QbdArgs),
    /// Flow-level load-balancing simulation.
    Balance(BalanceArgs),
    /// Re-run the experiment recorded in a manifest.
    Replay { manifest: PathBuf },
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let (subcommand, params, seed, outputs) = match cli.command {
        Command::Simulate(args) => {
            let scenario = args.resolve()?;
            let outputs = commands::simulate(&scenario)?;
            (
                "simulate",
                serde_json::to_value(&scenario),
                Some(scenario.seed),
                outputs,
            )
        }
        Command::Scalability(args) => {
            let outputs = commands::scalability(&args)?;
            ("scalability", serde_json::to_value(&args), None, outputs)
        }
        Command::Qbd(args) => {
            let outputs = commands::qbd(&args)?;
            ("qbd", serde_json::to_value(&args), None, outputs)
        }
        Command::Balance(args) => {
            let outputs = commands::balance(&args)?;
            (
                "balance",
                serde_json::to_value(&args),
                Some(args.seed),
                outputs,
            )
        }
        Command::Replay { manifest } => {
            let m = Manifest::load(&manifest).map_err(CliError::Usage)?;
            let outputs = commands::replay(&m)?;
            return finish(&cli.out, &m.subcommand, m.params, m.seed, outputs, started);
        }
    };
    let params = params.map_err(|e| CliError::Runtime(e.into()))?;
    finish(&cli.out, subcommand, params, seed, outputs, started)
}

fn finish(
    out: &std::path::Path,
    subcommand: &str,
    params: serde_json::Value,
    seed: Option<u64>,
    outputs: Vec<(String, String)>,
    started: Instant,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    for (name, contents) in &outputs {
        std::fs::write(out.join(name), contents)?;
    }
    let manifest = Manifest {
        subcommand: subcommand.to_string(),
        params,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.iter().map(|(n, _)| n.clone()).collect(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let path = out.join(format!("{subcommand}.manifest.json"));
    manifest.save(&path)?;
    for (name, _) in &outputs {
        println!("{}", out.join(name).display());
    }
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
