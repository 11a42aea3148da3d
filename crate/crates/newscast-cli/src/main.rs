//! Command-line driver. Each subcommand runs one pipeline stage against a
//! TOML configuration file; stages communicate only through files under the
//! configured output directory, so they can be re-run individually.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use newscast::pipeline::{self, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "newscast",
    about = "Day-ahead electricity demand forecasting from news text",
    version
)]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "newscast.toml")]
    config: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; affects speed only, never results.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixture at the configured input paths.
    Synth,
    /// Ingest the inputs and build all enabled feature families.
    Features,
    /// Screen features by bilateral Granger testing against demand.
    Select,
    /// Tune and fit the benchmark models and the text battery.
    Train,
    /// Score all models on the test period and compare them pairwise.
    Evaluate,
    /// Correlation grids, local surrogates and treatment effects.
    Explain,
    /// Assemble the final markdown report.
    Report,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Synth => Stage::Synth,
            Command::Features => Stage::Features,
            Command::Select => Stage::Select,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::Explain => Stage::Explain,
            Command::Report => Stage::Report,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("thread pool already initialised")?;
    }

    let mut config = PipelineConfig::from_file(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = out.display().to_string();
    }
    config.validate()?;

    let stage = cli.command.stage();
    let start = Instant::now();
    eprintln!("[{}] starting", stage.name());
    let lines = pipeline::run(stage, &config)?;
    for line in &lines {
        println!("{line}");
    }
    eprintln!("[{}] done in {:.1}s", stage.name(), start.elapsed().as_secs_f64());
    Ok(())
}
