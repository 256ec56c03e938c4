//! Gradient ascent on Φ.
//!
//! Both methods share one acceptance rule: a trial step is taken only if it
//! raises Φ by a fraction of the first-order prediction. After an accepted step the scalar step `ε` grows, after a
//! rejected one it shrinks, and too many consecutive rejections end the run
//! as stalled. The quasi-Newton method replaces the raw gradient by an
//! L-BFGS estimate of `H⁻¹∇Φ`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineOptions, GradientResult, Simulation};
use crate::error::{Error, Result};
use crate::model::{ControlProblem, Pulse};
use crate::robust::{robust_fidelity_with, robust_gradient_with, PhaseEnsemble};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `u ← u + ε ∇Φ` with an adaptive scalar `ε`.
    #[default]
    Steepest,
    /// L-BFGS direction under the same acceptance rule, an extension of
    /// the plain gradient step.
    QuasiNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Initial ε.
    pub initial_step: f64,
    pub grow: f64,
    pub shrink: f64,
    pub max_iterations: usize,
    pub target_infidelity: f64,
    /// Converged once `‖∇Φ‖_∞` falls below this.
    pub gradient_norm_tolerance: f64,
    pub max_line_search_steps: usize,
    /// Armijo constant `c`: a trial `u + δ` is accepted when
    /// `Φ_trial - Φ ≥ c ∇Φ·δ`. Zero accepts any increase.
    pub sufficient_increase: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Half-width of the uniform distribution for random starts, rad/ns.
    pub initial_amplitude: f64,
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Steepest,
            initial_step: 1.0,
            grow: 2.0,
            shrink: 0.5,
            max_iterations: 2000,
            target_infidelity: 1e-12,
            gradient_norm_tolerance: 1e-10,
            max_line_search_steps: 40,
            sufficient_increase: 1e-4,
            restarts: 1,
            seed: 0,
            initial_amplitude: 1.0,
            memory: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::invalid(format!("optimizer.{field}"), reason));
        if !(self.initial_step > 0.0) || !self.initial_step.is_finite() {
            return bad("initial_step", format!("must be positive, got {}", self.initial_step));
        }
        if !(self.grow > 1.0) {
            return bad("grow", format!("must exceed 1, got {}", self.grow));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink", format!("must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.target_infidelity > 0.0 && self.target_infidelity < 1.0) {
            return bad("target_infidelity", format!("must lie in (0, 1), got {}", self.target_infidelity));
        }
        if !(self.gradient_norm_tolerance >= 0.0) {
            return bad("gradient_norm_tolerance", "must be non-negative".into());
        }
        if self.max_line_search_steps == 0 {
            return bad("max_line_search_steps", "must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.sufficient_increase) {
            return bad("sufficient_increase", format!("must lie in [0, 0.5), got {}", self.sufficient_increase));
        }
        if self.restarts == 0 {
            return bad("restarts", "must be at least 1".into());
        }
        if !(self.initial_amplitude >= 0.0) {
            return bad("initial_amplitude", "must be non-negative".into());
        }
        if self.method == Method::QuasiNewton && self.memory == 0 {
            return bad("memory", "must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Gradient norm below tolerance.
    Converged,
    TargetReached,
    IterationCap,
    /// No improving step within the line-search budget.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub fidelity: f64,
    pub infidelity: f64,
    pub step: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub fidelity: f64,
    pub status: Status,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub pulse: Pulse,
    pub fidelity: f64,
    pub status: Status,
    pub iterations: usize,
    /// Φ after each accepted step, starting with the initial pulse.
    pub history: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub fidelity_evaluations: usize,
    pub gradient_evaluations: usize,
    pub restarts: Vec<RestartRecord>,
}

impl OptimizationResult {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// Φ, or its phase average when an ensemble is attached.
#[derive(Clone, Debug)]
pub struct Objective {
    sim: Simulation,
    ensemble: Option<PhaseEnsemble>,
}

impl Objective {
    pub fn new(problem: &ControlProblem) -> Result<Self> {
        Ok(Objective {
            sim: Simulation::new(problem)?,
            ensemble: None,
        })
    }

    pub fn with_options(problem: &ControlProblem, options: EngineOptions) -> Result<Self> {
        Ok(Objective {
            sim: Simulation::with_options(problem, options)?,
            ensemble: None,
        })
    }

    pub fn with_ensemble(mut self, ensemble: PhaseEnsemble) -> Result<Self> {
        ensemble.validate()?;
        self.ensemble = Some(ensemble);
        Ok(self)
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn problem(&self) -> &ControlProblem {
        self.sim.problem()
    }

    pub fn ensemble(&self) -> Option<&PhaseEnsemble> {
        self.ensemble.as_ref()
    }

    pub fn value(&self, pulse: &Pulse) -> Result<f64> {
        match &self.ensemble {
            Some(e) => robust_fidelity_with(&self.sim, pulse, e),
            None => self.sim.fidelity(pulse, 0.0),
        }
    }

    pub fn gradient(&self, pulse: &Pulse) -> Result<GradientResult> {
        match &self.ensemble {
            Some(e) => robust_gradient_with(&self.sim, pulse, e),
            None => self.sim.gradient(pulse, 0.0),
        }
    }
}

/// Entries uniform in `[-amplitude_scale, amplitude_scale]`, reproducible
/// from `seed`.
pub fn random_initial_pulse(problem: &ControlProblem, amplitude_scale: f64, seed: u64) -> Pulse {
    let shape = problem.pulse_shape();
    if amplitude_scale == 0.0 {
        return Pulse::zeros(&shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = shape
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| rng.random_range(-amplitude_scale..=amplitude_scale))
                .collect()
        })
        .collect();
    Pulse::from_rows(rows)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite_or_abort(iteration: usize, what: &str, phi: f64, grad: Option<&[f64]>, pulse: &[f64], step: f64) -> Result<()> {
    let grad_ok = grad.is_none_or(|g| g.iter().all(|v| v.is_finite()));
    if phi.is_finite() && grad_ok {
        return Ok(());
    }
    Err(Error::NumericalFailure {
        iteration,
        detail: format!(
            "non-finite {what}: phi={phi}, step={step:e}, max|u|={:e}, gradient finite={grad_ok}",
            inf_norm(pulse)
        ),
    })
}

/// L-BFGS two-loop recursion for the minimisation of `-Φ`, returned as an
/// ascent direction.
struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Lbfgs {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }

    /// `s = u_new - u`, `y = ∇(-Φ)_new - ∇(-Φ)`.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-300 {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn direction(&self, ascent: &[f64]) -> Vec<f64> {
        let mut q = ascent.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }
}

pub fn optimize(objective: &Objective, config: &OptimizerConfig, initial: Pulse) -> Result<OptimizationResult> {
    optimize_with_progress(objective, config, initial, &mut |_| {})
}

/// [`optimize`] with a callback receiving one record per accepted step.
pub fn optimize_with_progress(
    objective: &Objective,
    config: &OptimizerConfig,
    initial: Pulse,
    progress: &mut dyn FnMut(&IterationRecord),
) -> Result<OptimizationResult> {
    config.validate()?;
    let problem = objective.problem();
    initial.validate_for(problem)?;
    let shape = initial.shape();
    let bound = problem.amplitude_bound;

    let mut u = initial.flatten();
    let mut pulse = initial;
    let mut g = objective.gradient(&pulse)?;
    let mut grad = g.flat();
    let mut phi = g.fidelity;
    let mut fidelity_evaluations = 0;
    let mut gradient_evaluations = 1;
    finite_or_abort(0, "initial fidelity or gradient", phi, Some(&grad), &u, 0.0)?;

    let mut eps = config.initial_step;
    let mut lbfgs = Lbfgs::new(config.memory);
    let mut history = vec![phi];
    let mut trace = Vec::new();
    let record = |iteration: usize, phi: f64, eps: f64, grad: &[f64]| IterationRecord {
        iteration,
        fidelity: phi,
        infidelity: 1.0 - phi,
        step: eps,
        gradient_norm: inf_norm(grad),
    };
    let first = record(0, phi, eps, &grad);
    progress(&first);
    trace.push(first);

    let mut iteration = 0;
    let status = loop {
        if 1.0 - phi <= config.target_infidelity {
            break Status::TargetReached;
        }
        if inf_norm(&grad) < config.gradient_norm_tolerance {
            break Status::Converged;
        }
        if iteration >= config.max_iterations {
            break Status::IterationCap;
        }

        let mut direction = match config.method {
            Method::Steepest => grad.clone(),
            Method::QuasiNewton => lbfgs.direction(&grad),
        };
        if dot(&direction, &grad) <= 0.0 {
            lbfgs.clear();
            direction = grad.clone();
        }

        let mut accepted = None;
        for _ in 0..config.max_line_search_steps {
            let trial: Vec<f64> = u
                .iter()
                .zip(&direction)
                .map(|(x, d)| {
                    let v = x + eps * d;
                    match bound {
                        Some(b) => v.clamp(-b, b),
                        None => v,
                    }
                })
                .collect();
            let trial_pulse = Pulse::from_flat(&shape, &trial)?;
            let trial_phi = objective.value(&trial_pulse)?;
            fidelity_evaluations += 1;
            if trial_phi.is_nan() {
                finite_or_abort(iteration, "trial fidelity", trial_phi, None, &trial, eps)?;
            }
            let predicted: f64 = trial.iter().zip(&u).zip(&grad).map(|((a, b), g)| (a - b) * g).sum();
            if trial_phi > phi && trial_phi - phi >= config.sufficient_increase * predicted {
                accepted = Some((trial, trial_pulse));
                break;
            }
            eps *= config.shrink;
        }
        let Some((trial, trial_pulse)) = accepted else {
            break Status::Stalled;
        };

        let new = objective.gradient(&trial_pulse)?;
        gradient_evaluations += 1;
        let new_grad = new.flat();
        finite_or_abort(iteration + 1, "gradient", new.fidelity, Some(&new_grad), &trial, eps)?;
        debug_assert!(new.fidelity >= phi - 1e-14);

        if config.method == Method::QuasiNewton {
            let s = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
            let y = grad.iter().zip(&new_grad).map(|(old, new)| old - new).collect();
            lbfgs.push(s, y);
        }
        u = trial;
        pulse = trial_pulse;
        phi = new.fidelity;
        grad = new_grad;
        g = new;
        iteration += 1;
        eps *= config.grow;
        if config.method == Method::QuasiNewton {
            eps = eps.min(1.0);
        }
        history.push(phi);
        let r = record(iteration, phi, eps, &grad);
        progress(&r);
        trace.push(r);
    };
    drop(g);

    Ok(OptimizationResult {
        pulse,
        fidelity: phi,
        status,
        iterations: iteration,
        history,
        trace,
        fidelity_evaluations,
        gradient_evaluations,
        restarts: Vec::new(),
    })
}

/// Runs from `config.restarts` random starts with seeds `seed, seed+1, …`
/// and returns the best run, with every run summarised in `restarts`.
pub fn multistart(objective: &Objective, config: &OptimizerConfig) -> Result<OptimizationResult> {
    multistart_from(objective, config, None)
}

/// As [`multistart`], with the first run started from `warm` when given.
pub fn multistart_from(objective: &Objective, config: &OptimizerConfig, warm: Option<&Pulse>) -> Result<OptimizationResult> {
    config.validate()?;
    let problem = objective.problem();
    let runs: Vec<Result<OptimizationResult>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r as u64);
            let start = match (r, warm) {
                (0, Some(w)) => w.clone(),
                _ => random_initial_pulse(problem, config.initial_amplitude, seed),
            };
            optimize(objective, config, start)
        })
        .collect();
    let mut best: Option<OptimizationResult> = None;
    let mut records = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        records.push(RestartRecord {
            seed: config.seed.wrapping_add(r as u64),
            fidelity: run.fidelity,
            status: run.status,
            iterations: run.iterations,
        });
        if best.as_ref().is_none_or(|b| run.fidelity > b.fidelity) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts = records;
    Ok(best)
}
