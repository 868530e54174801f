use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anld::experiment::{
    compare_runs, experiment_schema, run_experiment, run_tracking_experiment, run_validation,
    tracking_schema, ExperimentConfig, TrackingConfig, ValidationOptions, COMPARISON_CURVES_FILE,
    COMPARISON_W1_FILE, OUTPUT_ROOT_ENV,
};
use anld::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "anld",
    version,
    about = "Adaptive non-reversible Langevin samplers: experiment runner"
)]
struct Cli {
    /// Root directory for outputs; each run writes to `<root>/<name>`.
    /// Defaults to the config's `output_dir`.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, value_name = "DIR")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm and trial of an experiment config.
    Run {
        config: PathBuf,
        /// Exact output directory (overrides the output root).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; trial t uses seed + t.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_parallel: Option<usize>,
        #[arg(long)]
        snapshot_every: Option<u64>,
    },
    /// Merge posterior-mean curves and final W1 of several run directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a regime-switching tracking config.
    Track {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in oracle suite and print a pass/fail table.
    Validate {
        /// Bias one (1-based) gradient coordinate of the two-parameter
        /// mixture model to check that the suite catches it.
        #[arg(long, hide = true, value_name = "COORD")]
        inject_gradient_fault: Option<usize>,
    },
    /// Print the JSON Schema of a config file kind.
    Schema {
        #[arg(value_enum, default_value_t = SchemaKind::Experiment)]
        kind: SchemaKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaKind {
    Experiment,
    Tracking,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn out_dir(
    out: Option<PathBuf>,
    root: Option<&PathBuf>,
    default_root: &std::path::Path,
    name: &str,
) -> PathBuf {
    out.unwrap_or_else(|| {
        root.map(PathBuf::as_path)
            .unwrap_or(default_root)
            .join(name)
    })
}

fn execute(cli: Cli) -> anld::Result<ExitCode> {
    let root = cli.output_root.as_ref();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            max_parallel,
            snapshot_every,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = max_parallel {
                cfg.max_parallel = Some(p);
            }
            if let Some(s) = snapshot_every {
                cfg.snapshot_every = s;
            }
            cfg.validate()?;
            let dir = out_dir(out, root, &cfg.output_dir, &cfg.name);
            log::info!(
                "running {} ({} algorithms x {} trials) into {}",
                cfg.name,
                cfg.algorithms.len(),
                cfg.trials,
                dir.display()
            );
            let report = run_experiment(&cfg, &dir)?;
            for t in &report.trials {
                if !t.final_w1.is_empty() {
                    log::debug!(
                        "{} trial {}: final W1 {:?}",
                        t.algorithm,
                        t.trial,
                        t.final_w1
                    );
                }
            }
            println!(
                "wrote {} files to {} in {:.1}s",
                report.files.len(),
                dir.display(),
                report.wall_clock_seconds
            );
        }
        Command::Compare { dirs, out } => {
            let dir = out_dir(out, root, std::path::Path::new("runs"), "comparison");
            let cmp = compare_runs(&dirs, &dir)?;
            println!(
                "wrote {} curve rows to {} and {} W1 rows to {}",
                cmp.curves.len(),
                dir.join(COMPARISON_CURVES_FILE).display(),
                cmp.w1.len(),
                dir.join(COMPARISON_W1_FILE).display()
            );
        }
        Command::Track { config, out, seed } => {
            let mut cfg = TrackingConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out_dir(out, root, &cfg.output_dir, &cfg.name);
            let report = run_tracking_experiment(&cfg, &dir)?;
            for (a, trace) in &report.traces {
                println!(
                    "{a}: steady error {:.4}, {} switches",
                    trace.steady_error(cfg.steady_fraction),
                    trace.switches.len()
                );
            }
            println!("wrote tracking outputs to {}", dir.display());
        }
        Command::Validate {
            inject_gradient_fault,
        } => {
            let corrupt_gradient = match inject_gradient_fault {
                Some(0) => return Err(Error::Config("--inject-gradient-fault is 1-based".into())),
                Some(c) if c > 2 => {
                    return Err(Error::Config(format!(
                        "--inject-gradient-fault {c} is out of range for the 2-parameter model"
                    )))
                }
                Some(c) => Some(c - 1),
                None => None,
            };
            let report = run_validation(&ValidationOptions { corrupt_gradient })?;
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Schema { kind } => {
            let schema = match kind {
                SchemaKind::Experiment => experiment_schema(),
                SchemaKind::Tracking => tracking_schema(),
            };
            println!("{}", serde_json::to_string_pretty(&schema)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
