use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::Parser;
use nbcheck_core::{parse_sanitizer_file, RunMode, SanitizerConfig};
use nbcheck_kernel::{ClientOptions, KernelSpecResolver};

use crate::discover::discover_notebooks;
use crate::report::{console_report, junit_xml};
use crate::runner::{exit_code, run_all, JupyterLauncher, RunConfig};

/// Exit status for usage and configuration errors.
pub const USAGE_ERROR: i32 = 2;

/// Re-execute Jupyter notebooks and check their outputs against the saved ones.
#[derive(Debug, Parser)]
#[command(name = "nbcheck", version)]
pub struct Cli {
    /// Notebook files or directories to search for *.ipynb.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,

    /// Check every cell's output unless marked otherwise (the default).
    #[arg(long, conflicts_with = "nbval_lax")]
    pub nbval: bool,

    /// Only check cells marked for output checking; others must just run.
    #[arg(long = "nbval-lax")]
    pub nbval_lax: bool,

    /// Sanitizer file of regex replacements applied before comparing.
    #[arg(long, value_name = "FILE")]
    pub sanitize_with: Option<PathBuf>,

    /// Kernel to use instead of the one named in each notebook.
    #[arg(long, value_name = "NAME")]
    pub kernel: Option<String>,

    /// Kernel for notebooks that name none.
    #[arg(
        long,
        value_name = "NAME",
        env = "NBCHECK_DEFAULT_KERNEL",
        default_value = "python3"
    )]
    pub default_kernel: String,

    /// Per-cell timeout in seconds.
    #[arg(long, value_name = "SECS", env = "NBCHECK_CELL_TIMEOUT", default_value = "300", value_parser = positive_secs)]
    pub cell_timeout: Duration,

    /// Kernel startup timeout in seconds.
    #[arg(long, value_name = "SECS", env = "NBCHECK_STARTUP_TIMEOUT", default_value = "60", value_parser = positive_secs)]
    pub startup_timeout: Duration,

    /// Notebooks validated in parallel.
    #[arg(short, long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    /// Also compare PNG and JPEG outputs byte for byte.
    #[arg(long)]
    pub compare_images: bool,

    /// Write a JUnit XML report here.
    #[arg(long, value_name = "FILE")]
    pub junit_xml: Option<PathBuf>,

    /// One line per cell.
    #[arg(short, long)]
    pub verbose: bool,
}

fn positive_secs(text: &str) -> Result<Duration, String> {
    let secs: f64 = text
        .parse()
        .map_err(|_| format!("{text:?} is not a number"))?;
    if !(secs.is_finite() && secs > 0.0) {
        return Err("must be a positive number of seconds".into());
    }
    Ok(Duration::from_secs_f64(secs))
}

impl Cli {
    pub fn mode(&self) -> RunMode {
        if self.nbval_lax {
            RunMode::Lax
        } else {
            RunMode::Strict
        }
    }
}

fn load_sanitizer(path: Option<&PathBuf>) -> anyhow::Result<SanitizerConfig> {
    let Some(path) = path else {
        return Ok(SanitizerConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read sanitizer file {}", path.display()))?;
    parse_sanitizer_file(&text)
        .with_context(|| format!("invalid sanitizer file {}", path.display()))
}

/// Runs the tool and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { USAGE_ERROR } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nbcheck: {e:#}");
            USAGE_ERROR
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<i32> {
    if !cli.nbval && !cli.nbval_lax {
        eprintln!("nbcheck: no mode flag given, running as --nbval (strict)");
    }
    let sanitizer = load_sanitizer(cli.sanitize_with.as_ref())?;
    let notebooks = discover_notebooks(&cli.paths)?;

    let config = RunConfig {
        mode: cli.mode(),
        sanitizer,
        kernel_override: cli.kernel.clone(),
        default_kernel: cli.default_kernel.clone(),
        cell_timeout: cli.cell_timeout,
        startup_timeout: cli.startup_timeout,
        jobs: usize::from(cli.jobs),
        compare_images: cli.compare_images,
    };
    let launcher = JupyterLauncher {
        resolver: KernelSpecResolver::from_env(cli.default_kernel.clone()),
        options: ClientOptions::default(),
    };

    let started = Instant::now();
    let results = run_all(&notebooks, &config, &launcher);
    let elapsed = started.elapsed();

    let report = console_report(&results, cli.verbose, elapsed);
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(report.as_bytes())?;
    stdout.flush()?;

    if let Some(path) = &cli.junit_xml {
        fs::write(path, junit_xml(&results, elapsed))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(exit_code(&results))
}
