use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gentest_cli::commands::{self, gen::GenArgs, test::TestArgs};
use gentest_cli::config::ExperimentConfig;
use gentest_core::error::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(
    name = "gentest",
    version,
    about = "Two-sample tests for validating generative models: generate data, tune the NPLM \
             classifier, calibrate empirical nulls, scan critical deformations, and test sample pairs"
)]
struct Cli {
    /// Worker threads (overrides GENTEST_WORKERS and the config)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write sample files (CSV or .f64 + JSON sidecar) from a generator
    Gen {
        /// Experiment config supplying generator / n / seed defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset instead of the config generator
        #[arg(long)]
        preset: Option<String>,
        /// Number of points
        #[arg(long)]
        count: Option<usize>,
        /// Output path (.csv or .f64)
        #[arg(long)]
        out: Option<PathBuf>,
        /// csv | binary (default: by extension)
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra preset registry JSON consulted before the builtins
        #[arg(long)]
        registry: Option<PathBuf>,
        /// List available presets and exit
        #[arg(long)]
        list_presets: bool,
        /// Write the builtin preset registry to this path and exit
        #[arg(long)]
        export_registry: Option<PathBuf>,
    },
    /// Tune NPLM hyperparameters on reference data
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Build empirical null distributions for the configured statistics
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for null files (default <output_dir>/nulls)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        null_tests: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the critical-deformation scans and emit summary tables
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        null_tests: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Test one pair of sample files against a persisted null
    Test {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Statistic kind name (must match the null)
        #[arg(long)]
        statistic: String,
        /// Null file stem or one of its files
        #[arg(long)]
        null: PathBuf,
        /// Comma-separated significance levels (default 0.05,0.01)
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render tables and list artifacts of a run directory
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory (default: the config's output_dir)
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn init_workers(flag: Option<usize>, config_workers: Option<usize>) {
    let from_env = std::env::var("GENTEST_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(k) = flag.or(from_env).or(config_workers) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
        {
            log::warn!("worker pool already initialized: {e}");
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    null_tests: Option<usize>,
    repeats: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    if let Some(t) = null_tests {
        config.null_tests = t;
    }
    if let Some(r) = repeats {
        config.repeats = r;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            config,
            preset,
            count,
            out,
            format,
            seed,
            registry,
            list_presets,
            export_registry,
        } => {
            init_workers(cli.workers, None);
            commands::gen::run(&GenArgs {
                config,
                preset,
                count,
                out,
                format,
                seed,
                registry,
                list_presets,
                export_registry,
            })
        }
        Command::Tune {
            config,
            seed,
            output_dir,
        } => {
            let cfg = load_config(&config, seed, output_dir, None, None)?;
            init_workers(cli.workers, cfg.workers);
            commands::tune::run(&cfg, config.parent())
        }
        Command::Calibrate {
            config,
            out,
            null_tests,
            seed,
            output_dir,
        } => {
            let cfg = load_config(&config, seed, output_dir, null_tests, None)?;
            init_workers(cli.workers, cfg.workers);
            commands::calibrate::run(&cfg, config.parent(), out.as_deref())
        }
        Command::Scan {
            config,
            repeats,
            null_tests,
            seed,
            output_dir,
        } => {
            let cfg = load_config(&config, seed, output_dir, null_tests, repeats)?;
            init_workers(cli.workers, cfg.workers);
            commands::scan::run(&cfg, config.parent())
        }
        Command::Test {
            x,
            y,
            statistic,
            null,
            alphas,
            seed,
        } => {
            init_workers(cli.workers, None);
            let alphas = match alphas {
                Some(list) => list
                    .split(',')
                    .map(|a| {
                        a.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidInput(format!("bad alpha {a:?} in --alphas"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?,
                None => vec![0.05, 0.01],
            };
            commands::test::run(&TestArgs {
                x,
                y,
                statistic,
                null,
                alphas,
                seed,
            })
        }
        Command::Report { config, dir } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => ExperimentConfig::load(&c)?.output_dir,
                (None, None) => {
                    return Err(Error::InvalidInput("report needs --config or --dir".into()))
                }
            };
            commands::report::run(&dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2; the contract here is 1 for usage problems.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e.category() {
                ErrorCategory::Usage => ExitCode::from(1),
                ErrorCategory::Numeric => ExitCode::from(2),
                ErrorCategory::Io => ExitCode::from(3),
            }
        }
    }
}
