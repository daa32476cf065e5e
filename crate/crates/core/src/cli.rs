//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::stages::{self, Bundle, StageError, StageResult};

#[derive(Debug, Parser)]
#[command(name = "beamplace", version, about = "DMD surrogates and Hankel-based sensor/actuator placement for a cantilever beam")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the beam and write the snapshot CSV.
    Simulate(CommonArgs),
    /// Fit DMD and write spectrum, mode-shape and reconstruction data.
    Identify(CommonArgs),
    /// Exhaustive placement on the unloaded beam.
    Place(CommonArgs),
    /// Iterate placement against the mass-loaded beam.
    Iterate(CommonArgs),
    /// LQR comparison of optimal, suboptimal and open-loop configurations.
    Evaluate(CommonArgs),
    /// Every stage in order plus a summary report.
    Pipeline(CommonArgs),
    /// Randomized Hankel/Gramian spectrum equivalence trials.
    VerifyGramian(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub pair_mass: Option<f64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Identify(a)
            | Command::Place(a)
            | Command::Iterate(a)
            | Command::Evaluate(a)
            | Command::Pipeline(a)
            | Command::VerifyGramian(a) => a,
        }
    }
}

/// Load the configuration and apply command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_iters {
        cfg.design.max_iters = n;
    }
    if let Some(m) = args.pair_mass {
        cfg.design.pair_mass = m;
    }
    Ok(cfg)
}

fn stage<T>(name: &'static str, r: Result<T>) -> StageResult<T> {
    r.map_err(|error| StageError { stage: name, error })
}

/// Run one subcommand against a validated configuration.
pub fn execute(cmd: &Command, cfg: &ExperimentConfig) -> StageResult<()> {
    let out = stage("output", Bundle::create(&cfg.output_dir))?;
    match cmd {
        Command::Simulate(_) => {
            let (set, data) = stage("simulate", stages::simulate(cfg))?;
            stage("simulate", stages::write_simulate(&out, cfg, &set, &data))
        }
        Command::Identify(_) => {
            let (set, data) = stage("simulate", stages::simulate(cfg))?;
            let id = stage("identify", stages::identify(cfg, &data))?;
            stage("identify", stages::write_identify(&out, cfg, &set, &id))
        }
        Command::Place(_) => {
            let (_, data) = stage("simulate", stages::simulate(cfg))?;
            let placed = stage("place", stages::place(cfg, &data))?;
            stage("place", stages::write_place(&out, cfg, &placed))
        }
        Command::Iterate(_) => {
            let res = stage("iterate", stages::iterate(cfg))?;
            stage("iterate", stages::write_iterate(&out, cfg, &res))
        }
        Command::Evaluate(_) => {
            let res = stage("iterate", stages::iterate(cfg))?;
            let cmp = stage("evaluate", stages::evaluate(cfg, &res))?;
            stage("evaluate", stages::write_evaluate(&out, cfg, &cmp))
        }
        Command::Pipeline(_) => stages::pipeline(cfg, &out),
        Command::VerifyGramian(_) => {
            let run = stage("verify-gramian", stages::verify_gramian(cfg))?;
            stage("verify-gramian", stages::write_gramian(&out, &run))
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

/// Parse, validate, run; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let cfg = match load_config(cli.command.args()).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("beamplace: invalid configuration: {e}");
            return exit_code(&e);
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("beamplace: {e}");
            exit_code(&e.error)
        }
    }
}
