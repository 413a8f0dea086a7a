//! Command-line front end for `textdate`.
//!
//! Subcommands: `preprocess`, `date`, `evaluate` and `synth`. Every flag can also be
//! set in a flat `key = value` file passed with `--config`; flags win over the file.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::{cmd_date, cmd_evaluate, cmd_preprocess, cmd_synth};
pub use settings::{parse_list, Grids, Settings};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "TEXTDATE_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] textdate::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use textdate::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::EmptyGrid(_)) => 2,
            CliError::Core(E::Numerical(_) | E::ZeroDenominator(_) | E::ZeroVector) => 4,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "textdate", version, about = "Estimate the dates of undated documents from a dated corpus")]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize raw JSON Lines documents.
    Preprocess(PreprocessArgs),
    /// Date target documents against a training corpus.
    Date(DateArgs),
    /// Split a dated corpus, tune on validation and report validation and test errors.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dated corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw JSON Lines input (`id`, `year`, `text`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Two-column TSV of token substitutions applied after punctuation removal.
    #[arg(long)]
    pub substitutions: Option<PathBuf>,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub year_min: Option<i32>,
    #[arg(long)]
    pub year_max: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Knn,
    Mp,
    Qr,
    Mt,
    Blend,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Method as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct DateArgs {
    /// Dated training corpus (JSON Lines, raw or tokenized).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Documents to date.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Output TSV; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory receiving one `(year, value)` CSV per target.
    #[arg(long, value_name = "DIR")]
    pub emit_curves: Option<PathBuf>,
    /// Exit nonzero when any target cannot be dated.
    #[arg(long)]
    pub strict: bool,
    /// Dated documents on which blend weights are fitted (`--method blend`).
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub substitutions: Option<PathBuf>,
    /// kNN shingle sizes, one distance each, e.g. `1,2`.
    #[arg(long)]
    pub knn_k: Option<String>,
    #[arg(long)]
    pub knn_m: Option<usize>,
    #[arg(long)]
    pub mp_k: Option<usize>,
    /// MP kernel bandwidth in years.
    #[arg(long)]
    pub mp_h: Option<f64>,
    /// Student-t degrees of freedom; `inf` gives a Gaussian kernel.
    #[arg(long)]
    pub mp_nu: Option<f64>,
    /// Local polynomial degree of the logit (0 or 1).
    #[arg(long)]
    pub mp_degree: Option<u8>,
    /// Count each distinct shingle once.
    #[arg(long)]
    pub mp_distinct: bool,
    #[arg(long)]
    pub qr_k: Option<usize>,
    #[arg(long)]
    pub qr_q: Option<f64>,
    #[arg(long)]
    pub qr_h: Option<f64>,
    #[arg(long)]
    pub mt_threshold: Option<f64>,
    #[arg(long)]
    pub mt_window: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated methods: knn, mp, qr, mt, mean.
    #[arg(long)]
    pub methods: Option<String>,
    /// Tuning grids such as `mp.h=4,8,16;mp.nu=3;knn.m=5,20`.
    #[arg(long)]
    pub grids: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train, validation and test fractions, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    pub split: Option<String>,
    /// Tune and report on validation and test pooled together.
    #[arg(long)]
    pub merge_validation: bool,
    /// Add a least-squares blend of the successful methods.
    #[arg(long)]
    pub blend: bool,
    /// Directory for `report.tsv`, `report.txt` and `predictions.tsv`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub substitutions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic model description (`key = value`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Model setting overriding the model file, e.g. `preset=deeds`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Number of documents.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
    // a second call in the same process finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a, &settings),
        Command::Date(a) => cmd_date(&a, &settings),
        Command::Evaluate(a) => cmd_evaluate(&a, &settings),
        Command::Synth(a) => cmd_synth(&a, &settings),
    }
}

/// Parses `args` and runs them, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
