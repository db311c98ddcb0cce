//! `atc`: fit, code and evaluate adaptive transform codecs from the shell.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 malformed or corrupt file,
//! 5 stream/model mismatch, 6 numerical failure, 7 invalid input,
//! 8 replay did not reproduce the recorded artifacts.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use atc_core::AtcError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "atc", version, about = "Adaptive transform coding of feature vectors")]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Do not write a manifest next to the outputs.
    #[arg(long, global = true)]
    pub no_manifest: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a labelled feature file from a random Gaussian mixture.
    Synth(SynthArgs),
    /// Fit a mixture and write a model file.
    Fit(FitArgs),
    /// Fit on a global-PCA projection and write a model with a PCA stage.
    PcaFit(PcaFitArgs),
    /// Compress a feature file.
    Encode(EncodeArgs),
    /// Reconstruct features from a stream.
    Decode(DecodeArgs),
    /// Rate-distortion sweep of one or more models.
    Sweep(SweepArgs),
    /// Compare an adaptive model against a baseline at matched rate.
    Compare(CompareArgs),
    /// Describe a model, stream or feature file.
    Info(InfoArgs),
    /// Re-run a manifest and check that every artifact hash matches.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of vectors to draw.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Closest pair of means, in units of sqrt(eig_max).
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eig_max: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eig_min: f64,
    #[arg(long)]
    pub unequal_weights: bool,
    /// One rotation for all components, means along its leading axes.
    #[arg(long)]
    pub shared_basis: bool,
    /// Seed of the generating mixture.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the draws; defaults to `seed`.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitOpts {
    /// Training features (ATCF).
    #[arg(long)]
    pub features: PathBuf,
    /// Mixture size for EM.
    #[arg(long, required_unless_present = "supervised", conflicts_with = "supervised")]
    pub k: Option<usize>,
    /// Build components from the file's labels instead of running EM.
    #[arg(long)]
    pub supervised: bool,
    /// JSON object mapping label to superclass; identity when omitted.
    #[arg(long, requires = "supervised")]
    pub superclass_map: Option<PathBuf>,
    #[arg(long, default_value_t = atc_core::gmm::DEFAULT_REG)]
    pub reg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Quantizer level counts, comma separated; must contain 1.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<usize>>,
    /// Explicit water levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    /// Number of water levels picked automatically when `--thetas` is absent.
    #[arg(long, default_value_t = 8)]
    pub theta_count: usize,
    /// Highest theoretical rate of the automatic grid, bits per dimension.
    #[arg(long, default_value_t = 4.0)]
    pub max_bits: f64,
    /// Print the log-likelihood of every EM iteration.
    #[arg(long, short)]
    pub verbose: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub fit: FitOpts,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PcaFitArgs {
    /// Explained-variance threshold; 1 keeps every positive direction.
    #[arg(long)]
    pub gamma: f64,
    #[command(flatten)]
    pub fit: FitOpts,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Position of the quality point in the model's list.
    #[arg(long, default_value_t = 0)]
    pub theta_index: usize,
    #[arg(long, value_enum, default_value_t = CoderArg::Ac)]
    pub coder: CoderArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    /// Rebuild every model on these water levels instead of its stored ones.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = NormArg::Variance)]
    pub normalization: NormArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub adaptive: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::Variance)]
    pub normalization: NormArg,
    /// JSON with the bucketed comparison and both sweeps.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct InfoArgs {
    pub path: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoderArg {
    Ac,
    Flc,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    Variance,
    SecondMoment,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

#[derive(Debug)]
pub enum CliError {
    Core(AtcError),
    Io(PathBuf, std::io::Error),
    /// Unparseable side file (manifest, superclass map).
    Format(String),
    /// Rejected command line, already rendered by the parser.
    Parse(String),
    Usage(String),
    Replay(String),
}

impl From<AtcError> for CliError {
    fn from(e: AtcError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Usage(_) => 2,
            CliError::Io(..) => 3,
            CliError::Format(_) => 4,
            CliError::Replay(_) => 8,
            CliError::Core(e) => match e {
                AtcError::Io(_) => 3,
                AtcError::Format(_)
                | AtcError::CorruptStream(_)
                | AtcError::CorruptModel(_)
                | AtcError::UnsupportedVersion { .. } => 4,
                AtcError::ModelMismatch { .. } => 5,
                AtcError::NumericalFailure(_) => 6,
                AtcError::InvalidInput(_) => 7,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Format(m) => write!(f, "malformed file: {m}"),
            CliError::Parse(m) => write!(f, "{}", m.trim_end()),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Replay(m) => write!(f, "replay mismatch: {m}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (without the program name) and runs it on a pool of the
/// requested size.
pub fn execute(argv: Vec<String>) -> CliResult<()> {
    let cli = match Cli::try_parse_from(std::iter::once("atc".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => return Err(CliError::Parse(e.render().to_string())),
        Err(e) => {
            let _ = e.print();
            return Ok(());
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli, &argv))
}

fn main() -> ExitCode {
    match execute(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Parse(_)) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
        Err(e) => {
            eprintln!("atc: {e}");
            ExitCode::from(e.code())
        }
    }
}
