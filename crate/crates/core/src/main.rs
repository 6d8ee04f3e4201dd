use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use nfsar::io::config::load_config;
use nfsar::io::pipeline::{run_pipeline, RunOptions, Stage};

#[derive(Parser)]
#[command(
    name = "nfsar",
    version,
    about = "Near-field SAR simulation, imaging and interference suppression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Noise seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Lower end of exported dB images (overrides the config).
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    floor_db: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the echo.
    Simulate(Common),
    /// Range-compress the echo.
    Compress(Common),
    /// Back-project the range profiles.
    Image(Common),
    /// Split the image into target and interference components.
    Suppress {
        #[command(flatten)]
        common: Common,
        /// Image to decompose instead of the raw image in the output directory.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Build the reference image, metrics and dB exports.
    Evaluate(Common),
    /// Run several stages in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of simulate,compress,image,suppress,evaluate.
        #[arg(
            long,
            value_name = "LIST",
            default_value = "simulate,compress,image,suppress,evaluate"
        )]
        stages: String,
        /// Image to decompose instead of the raw image in the output directory.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let (common, stages, input) = match cli.command {
        Command::Simulate(c) => (c, vec![Stage::Simulate], None),
        Command::Compress(c) => (c, vec![Stage::Compress], None),
        Command::Image(c) => (c, vec![Stage::Image], None),
        Command::Suppress { common, input } => (common, vec![Stage::Suppress], input),
        Command::Evaluate(c) => (c, vec![Stage::Evaluate], None),
        Command::Pipeline {
            common,
            stages,
            input,
        } => (common, Stage::parse_list(&stages)?, input),
    };

    let mut config = load_config(&common.config)?;
    if let Some(out) = common.out {
        config.output_dir = out;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(floor) = common.floor_db {
        config.evaluation.floor_db = floor;
    }

    let summary = run_pipeline(
        &config,
        &RunOptions {
            stages,
            input_image: input,
        },
    )?;
    for path in &summary.written {
        println!("{}", path.display());
    }
    if let Some(report) = &summary.report {
        print!("{}", report.to_key_value());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
