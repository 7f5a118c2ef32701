//! `denseprompt`: train, annotate, evaluate and benchmark from one config.

mod commands;
mod config;
mod data;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use commands::Ctx;
use config::{one_line, BackendKind, Config, Overrides};

#[derive(Parser)]
#[command(
    name = "denseprompt",
    version,
    about = "Few-shot dense-prompt annotation for crowded scenes"
)]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for independent crops.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration and its fingerprint.
    Config,
    /// Render synthetic scenes to PNG with COCO ground truth.
    Scenes {
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
    },
    /// Train the adapter, heatmap and scoring heads on box-labeled images.
    Train,
    /// Annotate the evaluation images with a trained checkpoint.
    Annotate {
        /// Defaults to `<out-dir>/heads.ck`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score COCO results against COCO ground truth.
    Eval {
        /// Defaults to `<out-dir>/results.json`.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Defaults to `<out-dir>/ground_truth.json`.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Compare prompt samplers and grid sizes on synthetic scenes.
    BenchSamplers {
        /// Use trained heads for prompt filtering and scoring; without
        /// one, every grid point is a prompt and the decoder's IoU
        /// estimate ranks masks.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let ov = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        backend: cli.backend,
    };
    let cfg = Config::load(cli.config.as_deref(), &ov)?;
    let ctx = Ctx::new(cfg, cli.out_dir);
    match cli.command {
        Command::Config => commands::show_config(&ctx),
        Command::Scenes { split } => commands::scenes(
            &ctx,
            match split {
                SplitArg::Train => commands::Split::Train,
                SplitArg::Eval => commands::Split::Eval,
            },
        ),
        Command::Train => commands::train_cmd(&ctx),
        Command::Annotate { checkpoint } => commands::annotate_cmd(&ctx, checkpoint.as_deref()),
        Command::Eval {
            results,
            ground_truth,
        } => commands::eval_cmd(&ctx, results.as_deref(), ground_truth.as_deref()),
        Command::BenchSamplers { checkpoint } => commands::bench_cmd(&ctx, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
