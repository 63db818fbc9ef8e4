//! `encgan`: train, sample, encode, transfer, score and verify from the shell.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encgan_core::datasets::TransformKind;
use encgan_core::Error;

#[derive(Parser)]
#[command(name = "encgan", version, about = "Multi-bias generators with an implicitly defined encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/critic pair from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples, or columns per bias with --per-bias.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Grid with one row per bias sharing latent codes column-wise.
        #[arg(long)]
        per_bias: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover latent codes and biases for every record of an NDJSON input.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate each target's latent code with the source's biases.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Disentanglement score of a checkpoint under a data transformation.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// NDJSON samples, or a JSON dataset description (e.g. IDX files).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_transform)]
        transform: TransformKind,
        #[arg(long, default_value_t = 11)]
        levels: usize,
        /// Base images taken from the start of the dataset.
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Property suite: inequality margins, gradient checks, inversion round trips.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the report and run-manifest; stdout only if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_transform(s: &str) -> Result<TransformKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Fixed exit-code contract.
pub const EXIT_PROPERTY_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_OPTIMIZATION: u8 = 4;
pub const EXIT_IO: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Contract(_) | Error::Dimension { .. } => EXIT_CONFIG,
        Error::NumericAbort { .. } => EXIT_NUMERIC,
        Error::OptimizationFailure { .. } | Error::Singular { .. } => EXIT_OPTIMIZATION,
        Error::Io { .. } | Error::Format { .. } | Error::UnsupportedVersion { .. } | Error::Json(_) => EXIT_IO,
        Error::Item { .. } => unreachable!("root strips item tags"),
    }
}

fn report(e: &Error) {
    match e.root() {
        Error::Config(problems) => {
            eprintln!("error: invalid config ({} problems)", problems.len());
            for p in problems {
                eprintln!("  - {p}");
            }
        }
        Error::NumericAbort { .. } => eprintln!("error: {e}\noffending batch saved to abort.json in the output directory"),
        _ => eprintln!("error: {e}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = output::seed_override().and_then(|env_seed| {
        let seed = |flag: u64| env_seed.unwrap_or(flag);
        match cli.command {
            Command::Train { config, out } => commands::train(&config, &out, env_seed),
            Command::Generate { checkpoint, n, per_bias, seed: s, out } => {
                commands::generate(&checkpoint, n, per_bias, seed(s), &out)
            }
            Command::Encode { checkpoint, input, mu, seed: s, out } => {
                commands::encode(&checkpoint, &input, mu, seed(s), &out)
            }
            Command::Transfer { checkpoint, input, target, mu, seed: s, out } => {
                commands::transfer(&checkpoint, &input, &target, mu, seed(s), &out)
            }
            Command::Score { checkpoint, dataset, transform, levels, images, mu, seed: s, out } => {
                commands::score(&checkpoint, &dataset, transform, levels, images, mu, seed(s), &out)
            }
            Command::Verify { trials, seed: s, out } => commands::verify(trials, seed(s), out.as_deref()),
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PROPERTY_FAILURE),
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
