use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "phasecrash", version, about = "Crash phase-transition toolkit: simulation, LPPL fits, early warning signals")]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with the command's configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate CPT, SPT, DPT or coupled paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Fit the LPPL model to each ticker of a price CSV.
    FitLppl(FitArgs),
    /// Rolling early warning signals for a price CSV.
    Ews(EwsArgs),
    /// Find drawdown crashes in a price CSV.
    DetectCrashes(DetectArgs),
    /// Compare signal trends before crashes and in normal periods.
    Study(StudyArgs),
    /// Build a synthetic price panel from a corpus spec.
    Synth(SynthArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::FitLppl(_) => "fit-lppl",
            Command::Ews(_) => "ews",
            Command::DetectCrashes(_) => "detect-crashes",
            Command::Study(_) => "study",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Cpt,
    Spt,
    Dpt,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalendarArg {
    AsIs,
    Intersect,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// Euler-Maruyama steps per path.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Independent paths (or coupled systems for `multi`).
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub mu_start: Option<f64>,
    #[arg(long)]
    pub mu_end: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha_vol: Option<f64>,
    /// Hurst ramp for `dpt`, running over the whole path.
    #[arg(long)]
    pub h_start: Option<f64>,
    #[arg(long)]
    pub h_end: Option<f64>,
    /// Stability-index ramp for `dpt` (replaces the Hurst schedule).
    #[arg(long)]
    pub alpha_start: Option<f64>,
    #[arg(long)]
    pub alpha_end: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    /// Assets in a coupled system.
    #[arg(long)]
    pub k: Option<usize>,
    /// Pairwise noise correlation of a coupled system.
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Only fit this ticker.
    #[arg(long)]
    pub ticker: Option<String>,
    #[arg(long)]
    pub tc_min: Option<f64>,
    #[arg(long)]
    pub tc_max: Option<f64>,
    #[arg(long)]
    pub m_min: Option<f64>,
    #[arg(long)]
    pub m_max: Option<f64>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub n_tc: Option<usize>,
    #[arg(long)]
    pub n_m: Option<usize>,
    #[arg(long)]
    pub n_omega: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct WindowArgs {
    /// Returns per rolling window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Comma-separated lags, e.g. 2,4,8,16.
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<usize>>,
    /// Comma-separated structure-function orders.
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<u32>>,
    #[arg(long)]
    pub detrend: bool,
    /// Comma-separated signal names (volatility, skewness, lag1_ac,
    /// anomalous_dim, ghe_N, conformality, cross_cov).
    #[arg(long, value_delimiter = ',')]
    pub signals: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EwsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub calendar: Option<CalendarArg>,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args, Clone)]
pub struct CrashArgs {
    /// Drawdown fraction that counts as a crash.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Rolling-peak horizon in observations.
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub recovery: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub crash: CrashArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Price CSV.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub input: Option<PathBuf>,
    /// Corpus spec JSON, simulated with `--seed`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub calendar: Option<CalendarArg>,
    #[arg(long)]
    pub pre_window: Option<usize>,
    #[arg(long)]
    pub margin: Option<usize>,
    #[command(flatten)]
    pub crash: CrashArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
