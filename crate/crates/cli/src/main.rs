use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod cmd;
mod config;
mod failure;

use config::Config;
use failure::Failure;

/// Rotated detection toolkit: DOTA tiling and evaluation, rotated NMS,
/// numerical self-checks and kernel benchmarks.
#[derive(Debug, Parser)]
#[command(name = "rotdet", version)]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Tiling preset.
    #[arg(long, global = true, value_parser = ["dota-ss", "dota-ms"])]
    preset: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut images and annotations into patches and write a tile manifest.
    Tile(cmd::tile::TileArgs),
    /// Score task-1 detection files against DOTA annotations.
    Eval(cmd::eval::EvalArgs),
    /// Run rotated NMS over task-1 detection files.
    Nms(cmd::nms::NmsArgs),
    /// Verify every numerical kernel against its reference implementation.
    Selfcheck(cmd::selfcheck::SelfcheckArgs),
    /// Measure kernel throughput on seeded random inputs.
    Bench(cmd::bench::BenchArgs),
}

pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub preset: Option<String>,
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let ctx = Context {
        config,
        seed: cli.seed,
        preset: cli.preset,
    };
    match cli.command {
        Command::Tile(args) => cmd::tile::run(&ctx, &args),
        Command::Eval(args) => cmd::eval::run(&ctx, &args),
        Command::Nms(args) => cmd::nms::run(&ctx, &args),
        Command::Selfcheck(args) => cmd::selfcheck::run(&ctx, &args),
        Command::Bench(args) => cmd::bench::run(&ctx, &args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Failure>().map_or(1, Failure::exit_code))
        }
    }
}
