use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use collisional_cli::commands::{cmd_evolve, cmd_rates, cmd_trajectories, write_json};
use collisional_cli::config::{self, ConfigError, Scenario};
use collisional_cli::{verify, CliError};

#[derive(Parser, Debug)]
#[command(name = "collisional", version, about = "Collisional decoherence of a system immersed in a thermal gas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for rate tuples and trajectories.
    #[arg(long, global = true, env = "COLLISIONAL_THREADS")]
    threads: Option<usize>,
    /// Master seed; overrides `trajectories.seed` and the verify seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Thermally averaged rate tensor and energy shifts.
    Rates,
    /// Deterministic master-equation trajectory.
    Evolve {
        /// Use this rate file instead of computing rates.
        #[arg(long)]
        rates: Option<PathBuf>,
    },
    /// Quantum-jump ensemble average with standard errors.
    Trajectories {
        #[arg(long)]
        rates: Option<PathBuf>,
    },
    /// Invariant suites on built-in models and the optional config.
    Verify {
        /// Extra rate files to check.
        #[arg(long)]
        rates: Vec<PathBuf>,
    },
}

fn load(cli: &Cli, required: bool) -> Result<Option<Scenario>, CliError> {
    let Some(path) = &cli.config else {
        return if required { Err(ConfigError::new("--config", "a scenario config is required").into()) } else { Ok(None) };
    };
    let mut scenario = config::load(path)?;
    if let (Some(seed), Some(tr)) = (cli.seed, scenario.config.trajectories.as_mut()) {
        tr.seed = seed;
    }
    Ok(Some(scenario))
}

fn out_dir(cli: &Cli, scenario: Option<&Scenario>) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| scenario.and_then(|s| s.config.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| ConfigError::new("--out", format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::new("--threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::new("--threads", e))?;
    }
    match &cli.command {
        Command::Rates => {
            let s = load(cli, true)?.expect("required");
            let path = cmd_rates(&s, &out_dir(cli, Some(&s))?)?;
            println!("wrote {}", path.display());
        }
        Command::Evolve { rates } => {
            let s = load(cli, true)?.expect("required");
            let path = cmd_evolve(&s, rates.as_deref(), &out_dir(cli, Some(&s))?)?;
            println!("wrote {}", path.display());
        }
        Command::Trajectories { rates } => {
            let s = load(cli, true)?.expect("required");
            let path = cmd_trajectories(&s, rates.as_deref(), &out_dir(cli, Some(&s))?)?;
            println!("wrote {}", path.display());
        }
        Command::Verify { rates } => {
            let s = load(cli, false)?;
            let extra: Vec<&Path> = rates.iter().map(PathBuf::as_path).collect();
            let report = verify::run(s.as_ref(), &extra, cli.seed.unwrap_or(verify::DEFAULT_SEED))?;
            for check in &report.checks {
                println!("{check}");
            }
            let dir = out_dir(cli, s.as_ref())?;
            let name = s.as_ref().map_or("verify.json", |s| s.config.output.verify.as_str());
            write_json(&dir.join(name), &report)?;
            let failures = report.failures();
            let gating = report.checks.iter().filter(|c| c.gating).count();
            println!("{} of {gating} gating checks passed", gating - report.checks.iter().filter(|c| c.gating && !c.pass).count());
            if !failures.is_empty() {
                return Err(CliError::VerifyFailed(failures));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
