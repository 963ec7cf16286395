//! The `kindling` harness: config loading, the train / evaluate / oracle /
//! chat / ingest-check commands, and their on-disk outputs.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kindling::remote::ApiKey;
use thiserror::Error;

pub use commands::{cmd_chat, cmd_evaluate, cmd_ingest_check, cmd_oracle, cmd_train, ChatOptions};
pub use config::{LoadedConfig, RunConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad config, bad input files or an unusable policy for the command.
    #[error("{0}")]
    Config(String),
    /// Anything that fails once the run is under way.
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

/// Everything a command needs besides the config file itself.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub api_key: ApiKey,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunContext {
    pub fn new(api_key: ApiKey) -> Self {
        Self {
            api_key,
            ..Self::default()
        }
    }

    /// Loads the config and applies the command-line overrides.
    pub fn load(&self, path: &std::path::Path) -> Result<LoadedConfig, HarnessError> {
        let mut loaded = LoadedConfig::load(path)?;
        if let Some(seed) = self.seed {
            loaded.run.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            loaded.run.output_dir = dir.clone();
        }
        Ok(loaded)
    }
}

#[derive(Debug, Parser)]
#[command(name = "kindling", version, about = "Train and probe conversational agents that optimise their partner's reward")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Self-play training of a template policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train the selfish baseline instead of the kind objective.
        #[arg(long)]
        baseline: bool,
        /// Start from this checkpoint instead of the configured policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Kindness objective and kind-action choice per prompt.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare Monte-Carlo objective estimates with exact enumeration.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Talk to the model; you play the target.
    Chat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Show the model's estimate of your reward after each reply.
        #[arg(long)]
        show_rewards: bool,
    },
    /// Validate the configured prompt dataset.
    IngestCheck {
        #[command(flatten)]
        common: Common,
        /// Skip invalid lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; errors go to `stderr`.
pub fn run<I, T>(args: I, api_key: ApiKey, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let outcome = dispatch(cli.command, api_key, stdin, stdout, stderr);
    let _ = stdout.flush();
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn context(api_key: ApiKey, common: &Common) -> RunContext {
    RunContext {
        api_key,
        seed: common.seed,
        output_dir: common.output_dir.clone(),
    }
}

fn dispatch(
    command: Command,
    api_key: ApiKey,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), HarnessError> {
    match command {
        Command::Train {
            common,
            baseline,
            checkpoint,
        } => {
            let cfg = context(api_key.clone(), &common).load(&common.config)?;
            cmd_train(&cfg, &api_key, baseline, checkpoint.as_deref(), stdout).map(|_| ())
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = context(api_key.clone(), &common).load(&common.config)?;
            cmd_evaluate(&cfg, &api_key, checkpoint.as_deref(), stdout).map(|_| ())
        }
        Command::Oracle { common, checkpoint } => {
            let cfg = context(api_key.clone(), &common).load(&common.config)?;
            cmd_oracle(&cfg, &api_key, checkpoint.as_deref(), stdout).map(|_| ())
        }
        Command::Chat {
            common,
            checkpoint,
            show_rewards,
        } => {
            let cfg = context(api_key.clone(), &common).load(&common.config)?;
            let options = ChatOptions {
                checkpoint,
                show_rewards,
            };
            cmd_chat(&cfg, &api_key, &options, stdin, stdout, stderr)
        }
        Command::IngestCheck { common, lenient } => {
            let cfg = context(api_key, &common).load(&common.config)?;
            cmd_ingest_check(&cfg, lenient, stdout, stderr).map(|_| ())
        }
    }
}
