use std::path::PathBuf;
use std::process::ExitCode;

use btlnmf::model::{DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use btlnmf::Normalization;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "btlnmf", version, about = "Low-rank Bradley-Terry-Luce ranking across tournaments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit W and H, optionally from several random starts.
    Fit(FitArgs),
    /// Fit plain or mixture BTL on the tournament-aggregated counts.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Classify every entry of the count tensor.
    Audit(AuditArgs),
    /// Sample a dataset from random planted factors.
    Synth(SynthArgs),
    /// Gradient and stationarity report for a saved result.
    Diag(DiagArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Long-format CSV: tournament,winner,loser,wins
    #[arg(long)]
    pub data: PathBuf,
    /// JSON with "players" and "tournaments" arrays fixing the order.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum NormArg {
    Row,
    Column,
    None,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Row => Normalization::Row,
            NormArg::Column => Normalization::Column,
            NormArg::None => Normalization::None,
        }
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Number of latent factors.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub eps: f64,
    /// Stop when no entry of W or H moves by this much.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Column)]
    pub norm: NormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Fail as soon as the objective increases.
    #[arg(long)]
    pub strict_monotone: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum BaselineCommand {
    Btl(BtlArgs),
    Mixture(MixtureArgs),
}

#[derive(Args, Debug)]
pub struct BtlArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MixtureArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Number of mixture components.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop EM when the log-likelihood moves by less than this.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Log-likelihood window defining near-optimal restarts.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// Games per pair per tournament.
    #[arg(long)]
    pub games: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// result.json written by `fit`.
    #[arg(long)]
    pub result: PathBuf,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Entries at or below this count as zero.
    #[arg(long, default_value_t = btlnmf::diagnostics::DEFAULT_POSITIVITY_THRESHOLD)]
    pub threshold: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Baseline(BaselineCommand::Btl(args)) => commands::baseline_btl(args),
        Command::Baseline(BaselineCommand::Mixture(args)) => commands::baseline_mixture(args),
        Command::Audit(args) => commands::audit(args),
        Command::Synth(args) => commands::synth(args),
        Command::Diag(args) => commands::diag(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
