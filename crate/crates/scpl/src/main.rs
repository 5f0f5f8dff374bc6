use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scpl::config::{load_config, ConfigError, SweepSpec};
use scpl::report::build_report;
use scpl::runner::{run_sweep, RunOptions};

/// Default output root when neither `--out` nor the config sets one.
const OUT_ENV: &str = "SCPL_OUT_DIR";
const FALLBACK_OUT: &str = "runs";

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "scpl", version, about = "Self-consuming performative loop experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a sweep config.
    Run {
        config: PathBuf,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (default: config `out`, then $SCPL_OUT_DIR, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds per experiment, overriding the config.
        #[arg(long)]
        repeats: Option<u32>,
        /// Runs executed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip per-generation model and dataset snapshots.
        #[arg(long)]
        no_snapshots: bool,
    },
    /// Summarize metric trends of the runs under a directory.
    Report { dir: PathBuf },
    /// Parse and validate a sweep config without running it.
    Validate { config: PathBuf },
}

fn config_exit(err: &ConfigError) -> u8 {
    match err {
        ConfigError::Read { .. } => EXIT_RUNTIME,
        ConfigError::Parse(_) | ConfigError::Invalid(_) => EXIT_VALIDATION,
    }
}

fn load(path: &Path, seed: Option<u64>, repeats: Option<u32>) -> Result<SweepSpec, ConfigError> {
    let mut spec = load_config(path)?;
    if let Some(seed) = seed {
        spec.set_seed(seed)?;
    }
    if let Some(repeats) = repeats {
        spec.set_repeats(repeats)?;
    }
    Ok(spec)
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    match cli.command {
        Command::Validate { config } => match load(&config, None, None) {
            Ok(spec) => {
                println!(
                    "ok: sweep {:?}, {} experiment(s) x {} repeat(s), {} generations",
                    spec.name,
                    spec.experiments.len(),
                    spec.repeats,
                    spec.generations
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(config_exit(&e), e),
        },
        Command::Run {
            config,
            seed,
            out,
            repeats,
            jobs,
            no_snapshots,
        } => {
            let spec = match load(&config, seed, repeats) {
                Ok(spec) => spec,
                Err(e) => return fail(config_exit(&e), e),
            };
            if jobs == 0 {
                return fail(EXIT_VALIDATION, "--jobs must be at least 1");
            }
            let out_root = out
                .or_else(|| spec.out.clone())
                .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT));
            let opts = RunOptions {
                jobs,
                snapshots: !no_snapshots,
                progress: true,
                ..RunOptions::new(out_root)
            };
            match run_sweep(&spec, &opts) {
                Ok(outcome) if outcome.is_success() => {
                    println!("{}", outcome.sweep_dir.display());
                    ExitCode::SUCCESS
                }
                Ok(outcome) => {
                    // Each message already names its experiment and seed.
                    for msg in outcome.failures().filter_map(|r| r.outcome.as_ref().err()) {
                        eprintln!("error: {msg}");
                    }
                    ExitCode::from(EXIT_RUNTIME)
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::Report { dir } => match build_report(&dir) {
            Ok(report) => {
                let text = report.render();
                if let Err(e) = std::fs::write(dir.join("report.md"), &text) {
                    return fail(EXIT_RUNTIME, format!("cannot write report: {e}"));
                }
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_RUNTIME, format!("{e:#}")),
        },
    }
}
