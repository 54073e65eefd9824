use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nre::commands::{self, Task, NRE_CHECKPOINT, PRETRAIN_CHECKPOINT};
use nre::config::{RunConfig, SEED_ENV};
use nre::{Error, Result};

/// Neighborhood-relational encoding: pretrain an autoencoder, fine-tune it
/// with the NRE loss and evaluate both.
#[derive(Parser)]
#[command(name = "nre", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the plain autoencoder.
    Pretrain,
    /// Fine-tune the pretrained autoencoder with the NRE loss.
    Train {
        /// Pretrained checkpoint (default: the run directory's).
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Evaluate the pretrained and NRE models on one task.
    Eval {
        /// probe, defense or anomaly.
        task: String,
        /// Pretrained checkpoint (default: the run directory's).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// NRE checkpoint (default: the run directory's).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write the training subset's latents as CSV.
    ExportLatents {
        /// Checkpoint whose encoder is used (default: the pretrained one).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long, default_value = "latents.csv")]
        out: PathBuf,
    },
    /// Compare single-cluster mining with exhaustive search.
    MineCheck {
        /// Pretrained checkpoint (default: the run directory's).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Number of training rows to mine over.
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
        None => None,
    };
    let overrides = cli
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {kv:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let env_seed = std::env::var(SEED_ENV).ok();
    RunConfig::resolve(text.as_deref(), &overrides, env_seed.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let in_run = |given: Option<PathBuf>, name: &str| given.unwrap_or_else(|| cfg.run_dir().join(name));
    match cli.command {
        Command::Pretrain => {
            println!("{}", commands::pretrain(&cfg)?.display());
        }
        Command::Train { pretrained } => {
            let path = commands::train(&cfg, &in_run(pretrained, PRETRAIN_CHECKPOINT))?;
            println!("{}", path.display());
        }
        Command::Eval {
            task,
            pretrained,
            model,
        } => {
            let task = Task::from_name(&task)?;
            let report = commands::eval(
                &cfg,
                task,
                &in_run(pretrained, PRETRAIN_CHECKPOINT),
                &in_run(model, NRE_CHECKPOINT),
            )?;
            for (name, value) in &report.metrics {
                println!("{name}\t{value}");
            }
        }
        Command::ExportLatents { checkpoint, out } => {
            let rows = commands::export_latents(&cfg, &in_run(checkpoint, PRETRAIN_CHECKPOINT), &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::MineCheck { pretrained, samples } => {
            let check = commands::mine_check(&cfg, &in_run(pretrained, PRETRAIN_CHECKPOINT), samples)?;
            if check.mismatches > 0 {
                return Err(Error::Data(format!(
                    "{} of {} queries differ from exhaustive search",
                    check.mismatches, check.queries
                )));
            }
            println!("ok: {} queries match exhaustive search", check.queries);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
