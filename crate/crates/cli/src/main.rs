use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use magres::config::{validate_config, Experiment, RunConfig};
use magres::exec::{with_workers, Execution};
use magres::experiment::run_experiment;
use magres::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "magres", version, about = "Resonances near Landau levels for a 3D magnetic Schroedinger operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config against the model hypotheses without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the experiment a config describes.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, 0 for all cores (overrides `workers`).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the available experiments.
    ListScenarios,
}

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    let raw = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return Err(ExitCode::from(EXIT_CONFIG));
        }
    };
    validate_config(&raw).map_err(|e| {
        match e {
            Error::Config(v) => {
                eprintln!("{}: {} violation(s)", path.display(), v.len());
                for s in v {
                    eprintln!("  - {s}");
                }
            }
            other => eprintln!("{}: {other}", path.display()),
        }
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListScenarios => {
            for e in Experiment::ALL {
                println!("{:<18} {}", e.name(), e.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({})", config.display(), cfg.experiment.name());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config, out, workers } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = out.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
            let workers = workers.or(cfg.workers).unwrap_or(0);
            let exec = if workers == 1 { Execution::Sequential } else { Execution::Parallel };
            match with_workers(workers, || run_experiment(&cfg, &out, exec)) {
                Ok(m) => {
                    println!("{} finished in {:.2} s", cfg.experiment.name(), m.wall_clock_seconds);
                    for f in &m.outputs {
                        println!("  {}", out.join(&f.path).display());
                    }
                    println!("  {}", out.join(magres::experiment::MANIFEST).display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{} failed: {e}", cfg.experiment.name());
                    eprintln!("see {}", out.join(magres::experiment::DIAGNOSTICS).display());
                    ExitCode::from(EXIT_NUMERICAL)
                }
            }
        }
    }
}
