use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use qtrace_nac_cli::{run_experiment, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(
    name = "qtrace-nac",
    version,
    about = "Off-policy Q-trace evaluation and natural actor-critic experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact oracles: optimal value, Q functions, mixing time, expected operator.
    Solve(Common),
    /// Q-trace error curves for a fixed target policy.
    Qtrace(Common),
    /// Off-policy natural actor-critic runs.
    Nac(Common),
    /// Policy-gradient iterates with an exact critic.
    ExactNpg(Common),
    /// Actor-critic runs over several truncation levels.
    Sweep(Common),
    /// Actor-critic with one critic segment reused at every iteration.
    ReuseDemo(Common),
    /// Finite-sample bound terms and the stepsize condition.
    Bounds(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
    /// MDP file, or `cyclic5` for the built-in instance.
    #[arg(long)]
    mdp: Option<String>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the report as CSV where available.
    #[arg(long)]
    csv: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(seeds) = self.seeds {
            config.num_seeds = seeds;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(mdp) = &self.mdp {
            config.mdp = mdp.clone();
        }
        if self.svg {
            config.svg = true;
        }
        for assignment in &self.set {
            config.apply_override(assignment)?;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (mode, common) = match &cli.command {
        Command::Solve(c) => (Mode::Solve, c),
        Command::Qtrace(c) => (Mode::Qtrace, c),
        Command::Nac(c) => (Mode::Nac, c),
        Command::ExactNpg(c) => (Mode::ExactNpg, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::ReuseDemo(c) => (Mode::ReuseDemo, c),
        Command::Bounds(c) => (Mode::Bounds, c),
    };
    let config = common.config()?;
    let report = run_experiment(mode, &config)?;
    match (&report.csv, common.csv) {
        (Some(csv), true) => print!("{csv}"),
        _ => print!("{}", report.text),
    }
    if !common.csv {
        for f in &report.files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
