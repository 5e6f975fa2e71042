//! Command-line driver: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod io;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "coarse-hawkes", version, about = "Bayesian Hawkes inference with coarsened locations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample the posterior for an event file.
    Fit,
    /// Draw one catalog from the cluster model.
    Simulate,
    /// Round event coordinates to a grid and attach square regions.
    Coarsen,
    /// Coverage study of the self-excitation lengthscale.
    Coverage,
    /// Cross-validate the latent dimension of the distance model.
    Cv,
    /// Time the parallel likelihood and gradient kernels.
    Benchmark,
    /// Summarize a snapshot table.
    Summarize,
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::resolve(&cli.flags)?;
    match cli.command {
        Command::Fit => commands::fit(&config),
        Command::Simulate => commands::simulate(&config),
        Command::Coarsen => commands::coarsen_events(&config),
        Command::Coverage => commands::coverage(&config),
        Command::Cv => commands::cv(&config),
        Command::Benchmark => commands::benchmark(&config),
        Command::Summarize => commands::summarize(&config),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_from_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(&Cli::try_parse_from(args)?)
}
