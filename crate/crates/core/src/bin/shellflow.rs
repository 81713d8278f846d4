//! Experiment runner: validates a configuration, dispatches it to the
//! probe library, and emits deterministic JSON/CSV artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shellflow::config::{ExperimentConfig, ExperimentKind};
use shellflow::{experiment, Error};

const EXIT_CONFIG: u8 = 64;

#[derive(Parser)]
#[command(name = "shellflow", version, about = "Stochastic shell-model laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run(RunArgs),
    /// Check a configuration without running anything.
    Validate {
        /// Configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML); built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name (overrides the config).
    #[arg(long)]
    experiment: Option<String>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Time step (overrides the config).
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon (overrides the config).
    #[arg(long, name = "T")]
    t_final: Option<f64>,
    /// Monte Carlo sample count (overrides the config).
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory; the SHELLFLOW_OUT environment variable wins.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Chain file for the finite-state experiment.
    #[arg(long)]
    chain: Option<String>,
    /// Dotted-path override, e.g. --override numerics.dt=1e-3 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match build_config(&args) {
            Ok(config) => match config.validate() {
                Ok(warnings) => {
                    for w in &warnings {
                        eprintln!("warning: {w}");
                    }
                    run_experiment(&config, args.threads)
                }
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            },
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Validate { config } => validate(&config),
    }
}

fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> ExitCode {
    match experiment::run(config, threads) {
        Ok(summary) => {
            for r in &summary.reports {
                println!("{}", r.one_line());
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            // leave a diagnostics file next to the other artifacts
            let dir = PathBuf::from(&config.output.dir);
            if std::fs::create_dir_all(&dir).is_ok() {
                let _ = std::fs::write(dir.join("diagnostics.txt"), format!("{e}\n"));
            }
            ExitCode::from(1)
        }
    }
}

fn validate(path: &PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let config = match ExperimentConfig::from_toml_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match config.validate() {
        Ok(warnings) => {
            for w in &warnings {
                println!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let base_text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => shellflow::config::DEFAULT_CONFIG_TOML.to_string(),
    };
    let mut doc: toml::Table = base_text
        .parse()
        .map_err(|e| Error::Parse(format!("config: {e}")))?;

    if let Some(name) = &args.experiment {
        ExperimentKind::parse(name)?; // fail fast with a clear message
        ExperimentConfig::apply_override(&mut doc, &format!("experiment=\"{name}\""))?;
    }
    if let Some(seed) = args.seed {
        ExperimentConfig::apply_override(&mut doc, &format!("numerics.seed={seed}"))?;
    }
    if let Some(dt) = args.dt {
        ExperimentConfig::apply_override(&mut doc, &format!("numerics.dt={dt}"))?;
    }
    if let Some(t) = args.t_final {
        ExperimentConfig::apply_override(&mut doc, &format!("numerics.t_final={t}"))?;
    }
    if let Some(m) = args.samples {
        ExperimentConfig::apply_override(&mut doc, &format!("numerics.samples={m}"))?;
    }
    if let Some(chain) = &args.chain {
        ExperimentConfig::apply_override(&mut doc, &format!("params.chain=\"{chain}\""))?;
    }
    for spec in &args.overrides {
        ExperimentConfig::apply_override(&mut doc, spec)?;
    }
    // --out, overridden by SHELLFLOW_OUT
    let out = std::env::var("SHELLFLOW_OUT").ok().or_else(|| args.out.clone());
    if let Some(out) = out {
        ExperimentConfig::apply_override(&mut doc, &format!("output.dir=\"{out}\""))?;
    }

    ExperimentConfig::from_toml_str(
        &toml::to_string(&doc).map_err(|e| Error::Parse(format!("config: {e}")))?,
    )
}
