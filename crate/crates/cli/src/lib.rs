//! `tgh`: simulate, train, evaluate, intervals and density commands.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
pub mod svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

static QUIET: AtomicBool = AtomicBool::new(false);

macro_rules! say {
    ($($t:tt)*) => {
        if !$crate::quiet() {
            println!($($t)*);
        }
    };
}
pub(crate) use say;

pub(crate) fn quiet() -> bool {
    QUIET.load(Ordering::Relaxed)
}

#[derive(Debug, Parser)]
#[command(name = "tgh", version, about = "g-and-h distributional regression experiments")]
pub struct Cli {
    /// Suppress progress messages on stdout
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Design {
    /// Well-specified g-and-h regression on x ~ U(0,1)
    Gandh,
    /// Student-t regression on x ~ U(0,1)
    StudentT,
    /// g-and-h noise over (lat, lon, year) rows
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Symmetric,
    Shortest,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (CSV plus a JSON description)
    Simulate {
        #[arg(long, value_enum)]
        design: Design,
        #[arg(long, default_value_t = 40_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from a JSON experiment config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model file; the loss history goes to `<out>.history.csv`
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Also render the loss curves as SVG
        #[arg(long)]
        svg: bool,
    },
    /// Residual diagnostics on one split
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Per-row prediction intervals and their coverage
    Intervals {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "symmetric")]
        variant: VariantArg,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predictive densities at chosen feature values
    Density {
        #[arg(long)]
        model: PathBuf,
        /// Feature rows separated by `;`, values within a row by `,`
        #[arg(long, allow_hyphen_values = true)]
        features: String,
        /// `lo:hi:n`
        #[arg(long, default_value = "-5:5:501", allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(tukey_gh::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tukey_gh::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(E::InvalidParameter(_) | E::Domain { .. }) => EXIT_USAGE,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tukey_gh::Error> for CliError {
    fn from(e: tukey_gh::Error) -> Self {
        CliError::Core(e)
    }
}

/// Sizes the global worker pool from `TGH_THREADS`, if set. Only the first call has an
/// effect.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TGH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("TGH_THREADS = {v:?} is not a positive integer")))?;
    // an already-initialized pool is fine when running in-process more than once
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    QUIET.store(cli.quiet, Ordering::Relaxed);
    match cli.command {
        Command::Simulate { design, n, seed, out } => commands::simulate(design, n, seed, &out),
        Command::Train {
            config,
            data,
            out,
            seed,
            svg,
        } => commands::train(&config, &data, &out, seed, svg),
        Command::Evaluate {
            model,
            data,
            split,
            out,
            svg,
        } => commands::evaluate(&model, &data, split, &out, svg),
        Command::Intervals {
            model,
            data,
            alpha,
            variant,
            split,
            out,
        } => commands::intervals(&model, &data, alpha, variant, split, &out),
        Command::Density {
            model,
            features,
            grid,
            out,
        } => commands::density(&model, &features, &grid, &out),
    }
}

/// Parses arguments, runs the command and returns the process exit code. Diagnostics go
/// to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tgh: {e}");
            e.exit_code()
        }
    }
}
