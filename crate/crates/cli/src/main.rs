//! `softbound` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computed result violates an invariant
//! (for example an attack beating a certified bound), 2 on usage or I/O errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "softbound",
    version,
    about = "Softmax bounds, tightness experiments and ensemble score verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate bounds on a grid over a two-class box, or at one point of a K-class box
    Bounds(BoundsArgs),
    /// Compare analytic bound gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Run the synthetic tightness experiment and write CSV
    Synth(SynthArgs),
    /// Write a random ReLU ensemble as JSON
    GenNet(GenNetArgs),
    /// Bound the worst-case score of an ensemble over an input ball
    Verify(VerifyArgs),
    /// Search for a high score inside the input ball
    Attack(AttackArgs),
}

#[derive(Args)]
pub struct BoundsArgs {
    /// Number of classes; grid mode needs 2, point mode defaults to the length of --at
    #[arg(long)]
    pub k: Option<usize>,
    /// Lower end of every logit interval except the first (which is fixed to 0 in grid mode)
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub lo: f64,
    /// Upper end of every logit interval except the first
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub hi: f64,
    /// Explicit per-class lower bounds (comma separated); overrides --lo
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    /// Explicit per-class upper bounds (comma separated); overrides --hi
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
    /// Grid points over the second logit (grid mode, K = 2)
    #[arg(long, default_value_t = 401)]
    pub grid: usize,
    /// Evaluate at this logit vector instead of a grid
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    /// Bound kinds to evaluate (default: all applicable)
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Output class whose probability is bounded
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Write CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Class counts to test
    #[arg(long = "k-values", value_delimiter = ',', default_values_t = vec![2usize, 3, 16])]
    pub k_values: Vec<usize>,
    /// Random points per kind and class count
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CaseArg {
    High,
    Low,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Half-width of each logit box
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub regions: usize,
    /// Uniform samples per region
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// high: Dirichlet mass boosted on the measured class; low: boosted elsewhere
    #[arg(long, value_enum, default_value_t = CaseArg::High)]
    pub case: CaseArg,
    /// Required when the CI environment variable is set
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest mean component values (default: 0.1, 0.2, ..., 0.9, 0.95 where reachable)
    #[arg(long = "mu-grid", value_delimiter = ',')]
    pub mu_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Run regions on the calling thread only
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-region gaps and ratios to this CSV
    #[arg(long = "per-region")]
    pub per_region: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenNetArgs {
    /// Layer widths, input first
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 8, 3])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub members: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Nll,
    Brier,
}

#[derive(Args)]
pub struct QueryArgs {
    /// Ensemble JSON file
    #[arg(long)]
    pub net: PathBuf,
    /// Center of the input ball (comma separated)
    #[arg(long = "x-star", value_delimiter = ',', allow_hyphen_values = true)]
    pub x_star: Vec<f64>,
    /// True class
    #[arg(long = "y-star")]
    pub y_star: usize,
    /// ℓ∞ radius
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::Nll)]
    pub rule: RuleArg,
    /// Seed for attack restarts
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    /// Bound families (lin, er_tangent, lse_tangent, lse_star_tangent); default all
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Include wall time in the report (makes output run-dependent)
    #[arg(long)]
    pub timing: bool,
    /// Slack allowed when comparing the attack with each bound
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub query: QueryArgs,
}

/// Command failure, mapped to an exit code.
pub enum Failure {
    /// Bad flags, unreadable or invalid files.
    Usage(anyhow::Error),
    /// Work completed but a checked invariant does not hold.
    Invariant(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(a) => commands::bounds(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::GenNet(a) => commands::gen_net(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Attack(a) => commands::attack(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(msg)) => {
            eprintln!("softbound: invariant violated: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("softbound: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
