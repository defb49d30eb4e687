use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use scas_core::env::StartMode;

use crate::commands::{cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, cmd_verify};
use crate::config::{RunConfig, SweepParameter};
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

/// Environment variable holding the log filter, e.g. `info` or `scas_core=debug`.
pub const LOG_ENV: &str = "SCAS_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(
    name = "scas",
    version,
    about = "Value-aware OOD state correction for offline RL"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect an offline dataset with the configured behavior policies.
    GenData,
    /// Train the dynamics model, then the agent.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Roll out a trained bundle.
    Eval(EvalArgs),
    /// Check the tabular closed forms against brute force.
    Verify(VerifyArgs),
    /// Train once per value of one agent parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<StartMode>,
    #[arg(long)]
    pub perturb_steps: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub stochastic: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub param: Option<SweepParameter>,
    /// Comma-separated values, e.g. `0,1,5`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub seeds: Option<usize>,
}

fn parse_mode(s: &str) -> Result<StartMode, String> {
    match s {
        "in_dist" | "in-dist" => Ok(StartMode::InDist),
        "ood_hole" | "ood-hole" => Ok(StartMode::OodHole),
        _ => Err(format!("unknown mode `{s}` (expected in_dist or ood_hole)")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match &cli.command {
        Command::Eval(a) => {
            if let Some(m) = a.mode {
                cfg.eval.mode = m;
            }
            if a.perturb_steps.is_some() {
                cfg.eval.perturb_steps = a.perturb_steps;
            }
            if let Some(n) = a.episodes {
                cfg.eval.episodes = n;
            }
            if let Some(n) = a.seeds {
                cfg.eval.seeds = n;
            }
        }
        Command::Verify(a) => {
            let v = &mut cfg.verify;
            v.instances = a.instances.unwrap_or(v.instances);
            v.states = a.states.unwrap_or(v.states);
            v.actions = a.actions.unwrap_or(v.actions);
            v.grid = a.grid.unwrap_or(v.grid);
            if let Some(alphas) = &a.alphas {
                v.alphas = alphas.clone();
            }
            v.stochastic |= a.stochastic;
            if let Some(seed) = cli.seed {
                v.seed = seed;
            }
        }
        Command::Sweep(a) => {
            if let Some(p) = a.param {
                cfg.sweep.parameter = p;
            }
            if let Some(v) = &a.values {
                cfg.sweep.values = v.clone();
            }
            if let Some(n) = a.seeds {
                cfg.sweep.seeds = n;
            }
        }
        Command::GenData | Command::Train { .. } => {}
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, &cli.out).map(drop),
        Command::Train { dataset } => cmd_train(&cfg, dataset.as_deref(), &cli.out).map(drop),
        Command::Eval(a) => cmd_eval(&cfg, &a.bundle, &cli.out).map(drop),
        Command::Verify(_) => cmd_verify(&cfg, &cli.out).map(drop),
        Command::Sweep(a) => cmd_sweep(&cfg, a.dataset.as_deref(), &cli.out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
