//! `opencil` command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
//! failure. Failures print one line to stderr of the form
//! `opencil: error[<kind>]: <message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use opencil_core::protocol::{emit_report, run_benchmark, BenchmarkReport, ReportFormat, RunConfig};
use opencil_core::synthgen::{generate, write_suite, SynthSpec};
use opencil_core::{Error, ErrorKind};

const THREADS_ENV: &str = "OPENCIL_THREADS";

#[derive(Parser)]
#[command(
    name = "opencil",
    version,
    about = "OOD detection benchmark for class-incremental learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark suite.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark and write report.json, report.csv and report.md.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads. Falls back to OPENCIL_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a saved report.json as a markdown table or CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a run config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
}

/// A failure on its way to the exit code.
struct Failure {
    kind: ErrorKind,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn config_error(message: String) -> Failure {
    Failure {
        kind: ErrorKind::Config,
        message,
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Runtime => 3,
    }
}

fn kind_label(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Runtime => "runtime",
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        kind: ErrorKind::Data,
        message: format!("{}: {e}", path.display()),
    })
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_error(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn gen_synth(spec: &Path, out: &Path) -> Result<(), Failure> {
    let spec: SynthSpec =
        serde_json::from_str(&read_text(spec)?).map_err(|e| config_error(format!("{}: {e}", spec.display())))?;
    spec.validate()?;
    let manifest = write_suite(&generate(&spec)?, out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    if !path.exists() {
        return Err(Failure {
            kind: ErrorKind::Data,
            message: format!("{}: no such file", path.display()),
        });
    }
    let cfg = RunConfig::read(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, threads_flag: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = out {
        cfg.output_dir = Some(out);
    }
    if let Some(n) = threads(threads_flag)? {
        cfg.threads = Some(n);
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    cfg.output_dir = Some(dir.clone());
    info!("running {} seed(s) into {}", cfg.seeds.len(), dir.display());

    let report = run_benchmark(&cfg)?;
    for path in emit_report(
        &report,
        &dir,
        &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown],
    )? {
        println!("{}", path.display());
    }
    match report.failures.first() {
        None => Ok(()),
        Some(f) => Err(Failure {
            kind: f.kind,
            message: format!(
                "{} of {} seed(s) failed; seed {}: {}",
                report.failures.len(),
                cfg.seeds.len(),
                f.seed,
                f.message
            ),
        }),
    }
}

fn report(input: &Path, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let report = BenchmarkReport::read(input)?;
    if !report.check_consistency() {
        return Err(Failure {
            kind: ErrorKind::Data,
            message: format!("{}: aggregates do not match the records", input.display()),
        });
    }
    let text = match format {
        Format::Md => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    }
    .render(&report)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure {
            kind: ErrorKind::Data,
            message: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn validate_config(path: &Path) -> Result<(), Failure> {
    let cfg = load_config(path)?;
    println!(
        "ok: {} seed(s), step size {}, ood method {}",
        cfg.seeds.len(),
        cfg.step_size,
        cfg.ood.name()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("bad arguments")
                .trim_start_matches("error: ");
            eprintln!("opencil: error[config]: {first}");
            return ExitCode::from(exit_code(ErrorKind::Config));
        }
    };
    let result = match cli.command {
        Command::GenSynth { spec, out } => gen_synth(&spec, &out),
        Command::Run {
            config,
            seed_override,
            out,
            threads,
        } => run(&config, seed_override, out, threads),
        Command::Report { input, format, out } => report(&input, format, out.as_deref()),
        Command::ValidateConfig { config } => validate_config(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("opencil: error[{}]: {message}", kind_label(f.kind));
            ExitCode::from(exit_code(f.kind))
        }
    }
}
