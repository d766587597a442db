use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glesim_cli::commands::{self, Failure};
use glesim_cli::config::{parse_config, Format, Suite};
use glesim_cli::output::{Meta, Writer};
use glesim_core::Execution;

/// Used when neither `--out` nor the config names an output directory.
const OUT_ENV: &str = "GLESIM_OUT";

#[derive(Parser)]
#[command(name = "glesim", version, about = "Generalized Langevin particle simulations and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and $GLESIM_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the GLE system and write the trajectory.
    Simulate,
    /// Integrate the overdamped system from the lifted initial condition.
    Overdamped,
    /// Coupled GLE/overdamped sweep over decreasing masses.
    Smallmass,
    /// Sliced Wasserstein distance between two ensembles over time.
    Ergodicity,
    /// Stratified drift scan of a Lyapunov candidate.
    Lyapunov,
    /// Empirical noise covariance against the memory kernel.
    Kernelcheck,
    /// Check the configuration without running anything.
    Validate,
}

impl Command {
    fn suite(self) -> Option<Suite> {
        Some(match self {
            Command::Simulate => Suite::Simulate,
            Command::Overdamped => Suite::Overdamped,
            Command::Smallmass => Suite::Smallmass,
            Command::Ergodicity => Suite::Ergodicity,
            Command::Lyapunov => Suite::Lyapunov,
            Command::Kernelcheck => Suite::Kernelcheck,
            Command::Validate => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Overdamped => "overdamped",
            Command::Smallmass => "smallmass",
            Command::Ergodicity => "ergodicity",
            Command::Lyapunov => "lyapunov",
            Command::Kernelcheck => "kernelcheck",
            Command::Validate => "validate",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = &cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let mut cfg = match parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.display().to_string());
    }
    if let Err(e) = cfg.validate(cli.command.suite()) {
        eprint!("{e}");
        return ExitCode::from(2);
    }
    let Some(suite) = cli.command.suite() else {
        println!("config OK");
        return ExitCode::SUCCESS;
    };

    let execution = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        Some(1) => Execution::Sequential,
        Some(_n) => {
            #[cfg(feature = "parallel")]
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(_n).build_global() {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(1);
            }
            Execution::Parallel
        }
        None => Execution::Parallel,
    };

    let dir = cfg
        .output
        .dir
        .clone()
        .or_else(|| std::env::var(OUT_ENV).ok())
        .unwrap_or_else(|| "glesim-out".to_string());
    let writer = Writer {
        dir: PathBuf::from(dir),
        format: cfg.output.format,
        meta: Meta::new(cli.command.name(), &cfg),
    };
    match commands::run(suite, &cfg, &writer, execution) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Runtime(m) | Failure::Suite(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
