pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pad_core::PadError;

pub use commands::run;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A problem with the invocation itself rather than the data or the numbers.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<PadError>() {
            return match e {
                PadError::Config(_) | PadError::Invalid(_) => EXIT_USAGE,
                PadError::NonFinite(_) | PadError::Planning(_) | PadError::Autodiff(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

#[derive(Debug, Parser)]
#[command(name = "pad", version, about = "Goal-reaching by gradient descent on a learned trajectory energy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the default configuration as TOML.
    InitConfig,
    /// Generate a behaviour dataset with a scripted policy.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of episodes (overrides data.episodes).
        #[arg(long)]
        episodes: Option<usize>,
        /// Output file (overrides data.path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train the planner (encoder, energy, projector).
    Train {
        #[command(flatten)]
        common: Common,
        /// Train without the projector (sets train.use_projector = false).
        #[arg(long)]
        no_projector: bool,
        /// Training steps (overrides train.steps).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the inverse-dynamics decoder on a trained planner's latents.
    TrainInvdyn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_projector: bool,
    },
    /// Evaluate the planner over tasks and seeds, optionally sweeping N and K.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_projector: bool,
        /// Replanning intervals to sweep.
        #[arg(long = "replan-interval", num_args = 1..)]
        replan_interval: Vec<usize>,
        /// Top-set sizes to sweep.
        #[arg(long = "top-k", num_args = 1..)]
        top_k: Vec<usize>,
        /// Output subdirectory of the run directory.
        #[arg(long, default_value = "eval")]
        out_name: String,
    },
    /// Run one episode and dump per-replan candidate diagnostics.
    PlanDebug {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_projector: bool,
        /// Start state, comma separated (defaults to a sampled task).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
        /// Goal state, comma separated (defaults to a sampled task).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        goal: Option<Vec<f64>>,
        /// Task family to sample start and goal from.
        #[arg(long, default_value_t = 0)]
        family: usize,
        /// Episode step budget.
        #[arg(long)]
        max_steps: Option<usize>,
    },
}

/// Flags shared by every experiment subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Environment: pointmass | pickplace.
    #[arg(long)]
    pub env: Option<String>,
    /// Data regime: expert | noisy.
    #[arg(long)]
    pub regime: Option<String>,
    /// Arbitrary overrides, `section.key=value` (value in TOML syntax).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}
