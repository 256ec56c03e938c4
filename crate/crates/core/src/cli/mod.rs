//! Command-line front end: configuration-driven optimization runs, sweeps
//! and re-evaluation of stored pulses.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{evaluate_on_fine_grid, Simulation};
use crate::error::{Error, Result};
use crate::model::{ControlProblem, Pulse};
use crate::optimizer::{multistart_from, Objective, OptimizationResult};

use config::{RunConfig, SweepAxis};
use output::{ErrorRow, PulseMeta};

/// Process exit status for `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotHermitian { .. }
        | Error::Quadrature { .. }
        | Error::NonFinite { .. }
        | Error::NumericalFailure { .. } => 3,
        Error::DimensionMismatch { .. }
        | Error::InvalidProblem { .. }
        | Error::InvalidTransfer(_)
        | Error::Config { .. }
        | Error::Io { .. } => 2,
    }
}

/// Machine-readable error record.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub exit_code: i32,
}

impl ErrorReport {
    pub fn new(err: &Error) -> Self {
        let (kind, path) = match err {
            Error::NotHermitian { .. } => ("not_hermitian", None),
            Error::DimensionMismatch { .. } => ("dimension_mismatch", None),
            Error::InvalidProblem { field, .. } => ("invalid_problem", Some(field.clone())),
            Error::InvalidTransfer(_) => ("invalid_transfer", None),
            Error::Quadrature { .. } => ("quadrature", None),
            Error::NonFinite { .. } => ("non_finite", None),
            Error::NumericalFailure { .. } => ("numerical_failure", None),
            Error::Config { path, .. } => ("config", Some(path.clone())),
            Error::Io { path, .. } => ("io", Some(path.display().to_string())),
        };
        ErrorReport {
            error: kind,
            message: err.to_string(),
            path,
            exit_code: exit_code(err),
        }
    }
}

/// Scores of one pulse on the truth model.
#[derive(Clone, Debug, Serialize)]
pub struct Score {
    pub phases: Vec<f64>,
    pub per_phase: Vec<f64>,
    pub mean: f64,
}

/// Fine-grid Φ of `pulse` under `problem` at each phase.
pub fn fine_score(cfg: &RunConfig, problem: &ControlProblem, pulse: &Pulse) -> Result<Score> {
    let phases = cfg.report_phases();
    let per_phase = phases
        .iter()
        .map(|&psi| match cfg.truth_n_sub {
            Some(n) => evaluate_on_fine_grid(&problem.with_n_sub(1), pulse, psi, n),
            None => evaluate_on_fine_grid(problem, pulse, psi, cfg.refinement),
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_phase.iter().sum::<f64>() / per_phase.len() as f64;
    Ok(Score { phases, per_phase, mean })
}

fn objective(cfg: &RunConfig, problem: &ControlProblem) -> Result<Objective> {
    let obj = Objective::new(problem)?;
    match cfg.training_ensemble()? {
        Some(e) => obj.with_ensemble(e),
        None => Ok(obj),
    }
}

/// One optimized sweep point.
#[derive(Clone, Debug, Serialize)]
pub struct PointResult {
    pub value: Option<f64>,
    pub result: OptimizationResult,
    pub score: Score,
}

impl PointResult {
    fn row(&self) -> ErrorRow {
        ErrorRow {
            value: self.value.unwrap_or(f64::NAN),
            fidelity: self.result.fidelity,
            fine_fidelity: self.score.mean,
            per_phase: self.score.per_phase.clone(),
        }
    }
}

/// Everything a run produced.
#[derive(Clone, Debug, Serialize)]
pub struct ResultBundle {
    pub config: RunConfig,
    pub points: Vec<PointResult>,
}

fn optimize_point(cfg: &RunConfig, value: Option<f64>, warm: Option<&Pulse>) -> Result<PointResult> {
    let problem = cfg.problem_at(value)?;
    let obj = objective(cfg, &problem)?;
    let warm = warm.map(|w| resize(w, &problem.pulse_shape()));
    let result = multistart_from(&obj, &cfg.optimizer, warm.as_ref())?;
    let truth = cfg.evaluation_problem_at(value)?;
    let score = fine_score(cfg, &truth, &result.pulse)?;
    Ok(PointResult { value, result, score })
}

/// Continuation start: keep the old amplitudes, zero-fill new pixels.
fn resize(pulse: &Pulse, shape: &[usize]) -> Pulse {
    Pulse::from_rows(
        shape
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let old = if k < pulse.controls() { pulse.row(k) } else { &[] };
                (0..n).map(|j| old.get(j).copied().unwrap_or(0.0)).collect()
            })
            .collect(),
    )
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_point(cfg: &RunConfig, dir: &Path, suffix: &str, point: &PointResult) -> Result<()> {
    let problem = cfg.problem_at(point.value)?;
    let meta = PulseMeta {
        controls: problem.controls.iter().map(|c| c.name.clone()).collect(),
        pixel_width: problem.grid.pixel_width,
        fidelity: Some(point.result.fidelity),
    };
    output::write_pulse(&dir.join(format!("pulse{suffix}.csv")), &point.result.pulse, &meta)?;
    let sim = Simulation::new(&problem)?;
    output::write_field(&dir.join(format!("field{suffix}.csv")), &sim, &point.result.pulse, 0.0)?;
    output::write_jsonl(&dir.join(format!("trace{suffix}.jsonl")), &point.result.trace)?;
    output::write_json(&dir.join(format!("restarts{suffix}.json")), &point.result.restarts)
}

fn refinement_label(cfg: &RunConfig) -> String {
    match cfg.truth_n_sub {
        Some(n) => format!("truth_n_sub:{n}"),
        None => cfg.refinement.to_string(),
    }
}

fn write_bundle(bundle: &ResultBundle, axis: &str) -> Result<()> {
    let cfg = &bundle.config;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    output::write_json(&dir.join("config.resolved.json"), cfg)?;
    let rows: Vec<ErrorRow> = bundle.points.iter().map(PointResult::row).collect();
    output::write_errors(&dir.join("errors.csv"), axis, &refinement_label(cfg), &cfg.report_phases(), &rows)
}

/// Optimizes the configured problem once (any sweep is ignored).
pub fn run_optimize(cfg: RunConfig) -> Result<ResultBundle> {
    let cfg = RunConfig { sweep: None, ..cfg };
    ensure_dir(&cfg.output_dir)?;
    let point = optimize_point(&cfg, None, None)?;
    write_point(&cfg, &cfg.output_dir, "", &point)?;
    let bundle = ResultBundle {
        config: cfg,
        points: vec![point],
    };
    write_bundle(&bundle, "none")?;
    Ok(bundle)
}

/// Optimizes every sweep point, writing per-point artifacts as they finish.
/// On failure the completed points are still written, with `error.json`.
pub fn run_sweep(cfg: RunConfig) -> Result<ResultBundle> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep", "the sweep command needs a `sweep` section"))?;
    ensure_dir(&cfg.output_dir)?;
    let axis = match sweep.axis {
        SweepAxis::GateTime => "gate_time_ns",
        SweepAxis::NSub => "n_sub",
    };
    let warm_start = sweep.warm_start.unwrap_or(sweep.axis == SweepAxis::GateTime);
    let mut bundle = ResultBundle {
        config: cfg.clone(),
        points: Vec::new(),
    };
    for (i, &value) in sweep.values.iter().enumerate() {
        let warm = if warm_start {
            bundle.points.last().map(|p| p.result.pulse.clone())
        } else {
            None
        };
        match optimize_point(&cfg, Some(value), warm.as_ref()) {
            Ok(point) => {
                write_point(&cfg, &cfg.output_dir, &format!("_{i}"), &point)?;
                bundle.points.push(point);
            }
            Err(err) => {
                write_bundle(&bundle, axis)?;
                output::write_json(&cfg.output_dir.join("error.json"), &ErrorReport::new(&err))?;
                return Err(err);
            }
        }
    }
    write_bundle(&bundle, axis)?;
    Ok(bundle)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationReport {
    pub pulse_file: PathBuf,
    /// Φ recorded when the pulse was written.
    pub stored_fidelity: Option<f64>,
    /// Objective under the training transfer on the optimization grid.
    pub model_fidelity: f64,
    /// Fine-grid score under the training transfer.
    pub training: Score,
    /// Fine-grid score under the evaluation transfer.
    pub evaluation: Score,
}

/// Scores a stored pulse under the training and evaluation transfers.
pub fn run_evaluate(cfg: &RunConfig, pulse_file: &Path) -> Result<EvaluationReport> {
    let (pulse, meta) = output::read_pulse(pulse_file)?;
    let problem = cfg.problem_at(None)?;
    let names: Vec<&str> = problem.controls.iter().map(|c| c.name.as_str()).collect();
    if meta.controls.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::config(
            pulse_file.display().to_string(),
            format!("pulse controls {:?} do not match the problem's {:?}", meta.controls, names),
        ));
    }
    pulse.validate_for(&problem)?;
    let model_fidelity = objective(cfg, &problem)?.value(&pulse)?;
    let training = fine_score(cfg, &problem, &pulse)?;
    let evaluation = fine_score(cfg, &cfg.evaluation_problem_at(None)?, &pulse)?;
    let report = EvaluationReport {
        pulse_file: pulse_file.to_path_buf(),
        stored_fidelity: meta.fidelity,
        model_fidelity,
        training,
        evaluation,
    };
    ensure_dir(&cfg.output_dir)?;
    output::write_json(&cfg.output_dir.join("evaluation.json"), &report)?;
    Ok(report)
}
