//! `promptgate` command line.
//!
//! Exit codes: 0 success (or every prompt safe), 1 flagged content found by
//! `detect`, 2 usage or input error, 3 provider failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use promptgate::moderate::Policy;
use promptgate::pipeline::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "promptgate",
    version,
    about = "Prompt moderation for text-to-image generation"
)]
pub struct Cli {
    /// Rule file (TOML); the bundled rules when omitted.
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
    /// Provider config (TOML); deterministic mocks when omitted.
    #[arg(long, global = true)]
    pub providers: Option<PathBuf>,
    /// Directory with replacement rewrite system prompts.
    #[arg(long, global = true)]
    pub prompts_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum, default_value_t = PolicyArg::Full)]
    pub policy: PolicyArg,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Where `eval` writes its report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Prompts in flight at once during `eval`.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallel: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run detection only. Prompts come from arguments, else one per stdin line.
    Detect { prompts: Vec<String> },
    /// Detect and rewrite. Prompts come from arguments, else one per stdin line.
    Moderate { prompts: Vec<String> },
    /// Score a labeled dataset and print the metric table.
    Eval {
        #[arg(long, required = true)]
        dataset: PathBuf,
    },
    /// Run the HTTP gateway until SIGINT or SIGTERM.
    Serve {
        #[arg(long, required = true)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    TextOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::TextOnly => Mode::TextOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Full,
    RewriteAll,
    None,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Full => Policy::Full,
            PolicyArg::RewriteAll => Policy::RewriteAll,
            PolicyArg::None => Policy::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// One JSON object per line.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Flagged = 1,
    Usage = 2,
    Provider = 3,
}

fn init_logging(serving: bool) {
    let default = if serving { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("PROMPTGATE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(matches!(cli.command, Command::Serve { .. }));
    let exit = match commands::run(&cli).await {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("promptgate: {e}");
            e.exit()
        }
    };
    ExitCode::from(exit as u8)
}
