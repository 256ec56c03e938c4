use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use subpixel_grape::cli::config::{load_config, schema, Overrides, RunConfig, ScenarioName};
use subpixel_grape::cli::{exit_code, run_evaluate, run_optimize, run_sweep, ErrorReport, ResultBundle};
use subpixel_grape::Result;

/// Sub-pixel GRAPE pulse optimization.
#[derive(Parser)]
#[command(name = "subgrape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in scenario (example1, example2, example3).
    #[arg(long)]
    scenario: Option<ScenarioName>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fine-grid factor for error evaluation.
    #[arg(long)]
    refinement: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Sample generators at the left edge of each sub-pixel.
    #[arg(long)]
    sample_at_left_edge: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a single pulse.
    Optimize(Common),
    /// Optimize at every value of the configured sweep.
    Sweep(Common),
    /// Score a stored pulse.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Pulse CSV written by `optimize` or `sweep`.
        #[arg(long)]
        pulse: PathBuf,
    },
    /// Check a configuration and print it with defaults filled in.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// Print the configuration JSON schema instead.
        #[arg(long)]
        schema: bool,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        scenario: c.scenario,
        out: c.out.clone(),
        seed: c.seed,
        refinement: c.refinement,
        restarts: c.restarts,
        sample_at_left_edge: c.sample_at_left_edge,
    });
    cfg.resolve()
}

fn summary(bundle: &ResultBundle) -> serde_json::Value {
    let points: Vec<_> = bundle
        .points
        .iter()
        .map(|p| {
            json!({
                "value": p.value,
                "fidelity": p.result.fidelity,
                "fine_fidelity": p.score.mean,
                "status": p.result.status,
                "iterations": p.result.iterations,
            })
        })
        .collect();
    json!({ "output_dir": bundle.config.output_dir, "points": points })
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Optimize(c) => Ok(summary(&run_optimize(resolve(&c)?)?)),
        Command::Sweep(c) => Ok(summary(&run_sweep(resolve(&c)?)?)),
        Command::Evaluate { common, pulse } => {
            let report = run_evaluate(&resolve(&common)?, &pulse)?;
            Ok(serde_json::to_value(report).expect("report serializes"))
        }
        Command::ValidateConfig { common, schema: true } => {
            let _ = common;
            Ok(schema())
        }
        Command::ValidateConfig { common, .. } => {
            let cfg = resolve(&common)?;
            let values: Vec<Option<f64>> = match &cfg.sweep {
                Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
                None => vec![None],
            };
            for v in values {
                cfg.problem_at(v)?;
                cfg.evaluation_problem_at(v)?;
            }
            Ok(serde_json::to_value(cfg).expect("config serializes"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(value) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            let report = ErrorReport::new(&err);
            eprintln!("{}", serde_json::to_string(&report).expect("json"));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
