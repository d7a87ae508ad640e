//! `codedpix`: generate PSF stacks, render dual-pixel captures, reconstruct,
//! score, and learn aperture codes.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use codedpix::Error;

use config::CommonFlags;

#[derive(Debug, Parser)]
#[command(name = "codedpix", version, about = "Coded-aperture dual-pixel simulator")]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    /// Repeat for more log output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a (coded) PSF stack and its MTF summary.
    GenPsf(commands::gen_psf::Args),
    /// Render a dual-pixel capture from an RGB-D scene.
    Render(commands::render::Args),
    /// Estimate defocus, depth and an all-in-focus image from a capture.
    Recon(commands::recon::Args),
    /// Score reconstructions against ground truth, or check a mask.
    Eval(commands::eval::Args),
    /// Learn an aperture code.
    OptimizeMask(commands::optimize::Args),
    /// Write a synthetic RGB-D dataset.
    Synth(commands::synth::Args),
}

/// Exit status for failed checks that are not errors.
pub const EXIT_CHECK_FAILED: u8 = 1;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_)
        | Error::Sizing(_)
        | Error::Shape(_)
        | Error::UnknownName { .. }
        | Error::State(_)
        | Error::Degenerate(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = cli.common.resolve().and_then(|cfg| match &cli.command {
        Command::GenPsf(a) => commands::gen_psf::run(a, cfg),
        Command::Render(a) => commands::render::run(a, cfg),
        Command::Recon(a) => commands::recon::run(a, cfg),
        Command::Eval(a) => commands::eval::run(a, cfg),
        Command::OptimizeMask(a) => commands::optimize::run(a, &cli.common, cfg),
        Command::Synth(a) => commands::synth::run(a, cfg),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
