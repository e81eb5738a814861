use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use guided_bridge::cli::{cmd_infer, cmd_simulate, cmd_smooth, cmd_validate, Overrides, RunConfig};
use guided_bridge::validate::ValidateOptions;
use guided_bridge::Error;

#[derive(Parser)]
#[command(name = "guided-bridge", version, about = "Guided diffusion bridges and data augmentation for partially observed diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    sweeps: Option<usize>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long = "steps-per-segment", global = true)]
    steps_per_segment: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a latent path and noisy observations of it.
    Simulate,
    /// Sample parameters (and paths) given observations.
    Infer,
    /// Posterior mean and bands of the latent path.
    Smooth,
    /// Run the self-checks and print a report.
    Validate {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        /// Add this bias to the pulling term before checking it (negative control).
        #[arg(long, default_value_t = 0.0)]
        guiding_bias: f64,
    },
}

fn run(cli: Cli) -> Result<bool, Error> {
    let load = || -> Result<RunConfig, Error> {
        let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut cfg = RunConfig::from_file(path)?;
        cfg.apply(&Overrides {
            seed: cli.seed,
            out: cli.out.clone(),
            sweeps: cli.sweeps,
            rho: cli.rho,
            steps_per_segment: cli.steps_per_segment,
        });
        Ok(cfg)
    };
    match &cli.command {
        Command::Simulate => {
            let out = cmd_simulate(&load()?)?;
            println!("wrote {} and {}", out.observations.display(), out.truth.display());
        }
        Command::Infer => {
            let out = cmd_infer(&load()?)?;
            println!("wrote {} and {}", out.trace.display(), out.summary.display());
            println!("{}", serde_json::to_string_pretty(&out.summary_value).expect("summary serializes"));
        }
        Command::Smooth => {
            let (path, s) = cmd_smooth(&load()?)?;
            println!("wrote {} ({} draws)", path.display(), s.draws);
        }
        Command::Validate { cases, guiding_bias } => {
            let report = cmd_validate(&ValidateOptions {
                seed: cli.seed.unwrap_or(ValidateOptions::default().seed),
                cases: *cases,
                guiding_bias: *guiding_bias,
            })?;
            println!("{report}");
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
