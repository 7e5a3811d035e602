// NaN-rejecting comparisons such as `!(x > 0.0)` are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssem_cli::commands::{cmd_population, cmd_sample, cmd_simulate, cmd_verify, theorem_gate};
use ssem_cli::{CliError, CliResult, RawConfig, RunConfig, Which};

#[derive(Parser)]
#[command(name = "ssem", version, about = "Semi-supervised EM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset and run finite-sample EM.
    Simulate(Common),
    /// Iterate the population operator from the configured start.
    Population(Common),
    /// Check theorem inequalities numerically.
    Verify {
        #[arg(value_enum)]
        which: WhichArg,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a dataset and write it as CSV.
    Sample(Common),
}

#[derive(Args)]
struct Common {
    /// Config file, or a summary JSON from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides data.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    Thm1,
    Thm2,
    #[value(name = "thm3-1")]
    Thm3Item1,
    #[value(name = "thm3-2")]
    Thm3Item2,
    #[value(name = "thm3-3")]
    Thm3Item3,
    Lemma3,
    Rescue,
    All,
}

impl From<WhichArg> for Which {
    fn from(w: WhichArg) -> Self {
        match w {
            WhichArg::Thm1 => Which::Thm1,
            WhichArg::Thm2 => Which::Thm2,
            WhichArg::Thm3Item1 => Which::Thm3Item1,
            WhichArg::Thm3Item2 => Which::Thm3Item2,
            WhichArg::Thm3Item3 => Which::Thm3Item3,
            WhichArg::Lemma3 => Which::Lemma3,
            WhichArg::Rescue => Which::Rescue,
            WhichArg::All => Which::All,
        }
    }
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::config("--config", format!("{}: {e}", common.config.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    for pair in &common.set {
        raw.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        raw.set("data.seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        let s = out
            .to_str()
            .ok_or_else(|| CliError::config("--out", "path is not valid UTF-8"))?;
        raw.set("output.directory", s)?;
    }
    RunConfig::from_raw(&raw)
}

fn run(cli: Cli) -> CliResult<()> {
    let outcome = match &cli.command {
        Command::Simulate(c) => cmd_simulate(&load(c)?)?,
        Command::Population(c) => cmd_population(&load(c)?)?,
        Command::Sample(c) => cmd_sample(&load(c)?)?,
        Command::Verify { which, common } => {
            let which = Which::from(*which);
            let outcome = cmd_verify(&load(common)?, which)?;
            for p in &outcome.outputs {
                println!("{}", p.display());
            }
            return theorem_gate(&outcome, which.label());
        }
    };
    for p in &outcome.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
