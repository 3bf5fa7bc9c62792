mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Geometric texture synthesis from a single reference mesh.
#[derive(Debug, Parser)]
#[command(name = "meshtex", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run single-threaded so outputs are bitwise reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a subdivision pyramid of a template to a reference mesh.
    Remesh(commands::RemeshArgs),
    /// Train the generator hierarchy on a pyramid written by `remesh`.
    Train(commands::TrainArgs),
    /// Transfer the trained texture onto a target mesh.
    Synthesize(commands::SynthesizeArgs),
    /// Blend between the latents of two seeds.
    Interpolate(commands::InterpolateArgs),
    /// Uniformly subdivide a mesh.
    Subdivide(commands::SubdivideArgs),
    /// Check that a mesh is a closed, consistently oriented manifold.
    Validate(commands::InspectArgs),
    /// Print vertex, edge and face counts, Euler characteristic and genus.
    Stats(commands::InspectArgs),
}

pub(crate) fn configure_threads(deterministic: bool) {
    let from_env = std::env::var("MESHTEX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let threads = if deterministic { Some(1) } else { from_env };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Remesh(a) => commands::remesh(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Synthesize(a) => commands::synthesize(&cli.global, a),
        Command::Interpolate(a) => commands::interpolate(&cli.global, a),
        Command::Subdivide(a) => commands::subdivide(&cli.global, a),
        Command::Validate(a) => commands::validate(&cli.global, a),
        Command::Stats(a) => commands::stats(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
