use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sare_kit::config::RunConfig;
use sare_kit::error::{KitError, Result};

/// Structure-aware fragment reassembly experiments: generate fractured
/// objects, train the flow model, sample assemblies, refine them with
/// geometric verification, and evaluate.
#[derive(Parser)]
#[command(name = "sare-kit", version, about)]
struct Cli {
    /// Run configuration (TOML or JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override (wins over config file and SARE_KIT_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread bound for per-object parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fractured-object dataset with structural ground truth.
    GenData {
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the velocity field on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample assemblies for the test split.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Euler steps override.
        #[arg(long)]
        steps: Option<usize>,
        /// Accept artifacts from a different config hash.
        #[arg(long)]
        force: bool,
    },
    /// Refine first-pass predictions with geometric verification.
    Refine {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// repaint | freeze | oracle-adjacency (overrides config).
        #[arg(long)]
        mode: Option<String>,
        /// Blend strength override.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate predictions (optionally paired with a refined run).
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        refined: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Accept cross-hash pairing.
        #[arg(long)]
        force: bool,
    },
    /// Run the configured ablation sweep (trains one model per row).
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render summary/ablation artifacts as text tables.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        ablate: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_seed_overrides(cli.seed)?;
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(KitError::usage("--jobs must be at least 1"));
        }
        sare_core::par::set_jobs(jobs).map_err(KitError::runtime)?;
    }
    match &cli.command {
        Command::GenData { out } => {
            let config = load_config(&cli)?;
            sare_kit::cmd_gen_data(&config, out)
        }
        Command::Train { data, out } => {
            let config = load_config(&cli)?;
            sare_kit::cmd_train(&config, data, out)
        }
        Command::Sample {
            data,
            checkpoint,
            out,
            steps,
            force,
        } => {
            let mut config = load_config(&cli)?;
            if let Some(steps) = steps {
                if *steps == 0 {
                    return Err(KitError::usage("--steps must be at least 1"));
                }
                config.sample.steps = *steps;
            }
            sare_kit::cmd_sample(&config, data, checkpoint, out, *force)
        }
        Command::Refine {
            data,
            checkpoint,
            pred,
            out,
            mode,
            alpha,
            force,
        } => {
            let config = load_config(&cli)?;
            sare_kit::cmd_refine(
                &config,
                data,
                checkpoint,
                pred,
                out,
                mode.as_deref(),
                *alpha,
                *force,
            )
        }
        Command::Eval {
            data,
            pred,
            refined,
            out,
            force,
        } => {
            let config = load_config(&cli)?;
            sare_kit::cmd_eval(&config, data, pred, refined.as_deref(), out, *force)
        }
        Command::Ablate { data, out } => {
            let config = load_config(&cli)?;
            sare_kit::cmd_ablate(&config, data, out)
        }
        Command::Report { summary, ablate } => sare_kit::cmd_report(summary, ablate.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
