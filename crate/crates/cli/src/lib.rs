//! Command-line driver: `gen`, `batch`, `replay`, `index`, `retrieve`, `eval`
//! and `bench`, all configured from one flat key=value file plus flags.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntarget: ",
    env!("MULTISAGE_TARGET"),
    "\nprofile: ",
    env!("MULTISAGE_PROFILE"),
);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] multisage_core::Error),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("missing `{0}`: pass --{flag} or set `{0}` in the config file", flag = .0.replace('_', "-"))]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Io { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "multisage", version, long_version = LONG_VERSION, about = "Multi-embedding user profiles: clustering, indexing, retrieval and offline evaluation")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for every random choice (generation, index levels, sampling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log format on stderr.
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub log: LogFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: embeddings.bin, actions.jsonl, labels.jsonl, interests.jsonl.
    Gen {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Number of users (overrides `world.n_users`).
        #[arg(long)]
        users: Option<usize>,
    },
    /// Build every user's profile from the trailing window.
    Batch {
        #[arg(long)]
        actions: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Profile store to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        /// Inference date (YYYY-MM-DD); defaults to the day of the latest action.
        #[arg(long)]
        as_of: Option<NaiveDate>,
    },
    /// Apply intra-day events on top of a batch store.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Where to write the served profiles (batch with overlays applied).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
    },
    /// Build, query or benchmark the nearest-neighbor index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Recommendations for one or all users of a profile store, as JSON lines.
    Retrieve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Exclude pins each user already engaged with.
        #[arg(long)]
        actions: Option<PathBuf>,
        #[arg(long)]
        user: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        e: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        budget: Option<usize>,
        #[arg(long)]
        no_cache: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Offline evaluation; prints a Markdown table, writes report.md and report.csv to --out-dir.
    Eval {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        actions: Option<PathBuf>,
        /// Per-user interests written by `gen`; required by the diversity suite.
        #[arg(long)]
        interests: Option<PathBuf>,
        /// Prebuilt index; built in memory from the embeddings when absent.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Time Ward clustering on random inputs; CSV on stdout.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Refine the pool and build the index.
    Build {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        build_beam: Option<usize>,
        #[arg(long)]
        query_beam: Option<usize>,
    },
    /// Nearest neighbors of a pin, as JSON.
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        pin: u64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Recall@k and latency per query beam, as CSV.
    Bench {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 25, 50, 100, 200])]
        beams: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    NextAction,
    Retrieval,
    Ranking,
    Diversity,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Point counts to cluster.
    #[arg(long, value_delimiter = ',', default_values_t = [250, 500, 1000, 2000, 4000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

fn init_logging(format: LogFormat) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    // A second initialization (tests calling `run` repeatedly) is harmless.
    let _ = match format {
        LogFormat::Json => builder.json().try_init(),
        LogFormat::Text => builder.try_init(),
    };
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: invalid value for `threads`: must be positive");
            return EXIT_INVALID;
        }
        // Fails only if a pool already exists, which keeps the first setting.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = load_config(&cli).and_then(|cfg| commands::dispatch(cli.command, cfg));
    match result {
        Ok(output) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(output.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return EXIT_IO;
            }
            EXIT_OK
        }
        Err(e) => {
            match cli.log {
                LogFormat::Json => tracing::error!(error = %e, "command failed"),
                LogFormat::Text => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}

pub(crate) fn require<'a>(field: &'static str, flag: &'a Option<PathBuf>, config: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    flag.as_deref().or(config.as_deref()).ok_or(CliError::Missing(field))
}
