use std::path::PathBuf;
use std::process::ExitCode;

use capnmpc_cli::commands;
use capnmpc_cli::config::AlgorithmName;
use capnmpc_cli::{exit, CliError, Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Particle-filter NMPC path-following experiments.
///
/// Exit codes: 0 success, 2 usage, 3 config file unreadable, 4 config parse
/// error, 5 config validation error, 6 run aborted or seed failed, 7 output
/// could not be written.
#[derive(Parser)]
#[command(name = "capnmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single closed-loop run.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmName>,
    },
    /// Both algorithms over a batch of seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file, or `default` for the shipped one.
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    output: PathBuf,
}

fn load(common: &Common, overrides: Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        particles: common.particles,
        horizon: common.horizon,
        dt: common.dt,
        ..overrides
    });
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run {
            common,
            seed,
            algorithm,
        } => {
            let cfg = load(
                &common,
                Overrides {
                    seed,
                    algorithm,
                    ..Overrides::default()
                },
            )?;
            let out = commands::run(&cfg, &common.output)?;
            if let Some(m) = out.metrics {
                println!(
                    "{} seed {}: {} steps, rmse {:.4} m, cost {:.1}, degenerate steps {}",
                    capnmpc::Algorithm::from(cfg.algorithm).label(),
                    cfg.seed,
                    out.record.len(),
                    m.rmse,
                    m.cost,
                    out.record.degenerate_count()
                );
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(exit::OK)
        }
        Command::Compare { common, seeds } => {
            let cfg = load(&common, Overrides::default())?;
            let out = commands::compare(&cfg, &seeds, &common.output)?;
            println!(
                "{:<10} {:>5} {:>22} {:>22} {:>15}",
                "algorithm", "runs", "rmse (mean ± std)", "cost (mean ± std)", "violation rate"
            );
            for r in &out.summary {
                println!(
                    "{:<10} {:>5} {:>22} {:>22} {:>15.4}",
                    r.algorithm,
                    r.runs,
                    format!("{:.4} ± {:.4}", r.rmse_mean, r.rmse_std),
                    format!("{:.1} ± {:.1}", r.cost_mean, r.cost_std),
                    r.violation_rate_mean
                );
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if out.failed_seeds.is_empty() {
                Ok(exit::OK)
            } else {
                for r in out.results.iter().filter(|r| r.error.is_some()) {
                    eprintln!(
                        "seed {} {} failed: {}",
                        r.seed,
                        r.algorithm.label(),
                        r.error.as_deref().unwrap_or_default()
                    );
                }
                Ok(exit::RUNTIME)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
