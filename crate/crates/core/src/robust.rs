//! Averaging the fidelity and its gradient over an unknown carrier phase.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{GradientResult, Simulation};
use crate::error::{Error, Result};
use crate::model::{ControlProblem, Pulse};

/// Phases at which robust pulses are scored but never trained.
pub const HELD_OUT_PHASES: [f64; 9] = [
    2.46245, 2.13875, 1.57081, 0.304685, 0.043838, 1.65238, 0.914728, 2.02047, 0.518253,
];

pub const DEFAULT_PHASE_SAMPLES: usize = 8;

/// Weighted phase samples `ψ_i ∈ [0, period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnsemble {
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
    pub period: f64,
}

impl PhaseEnsemble {
    /// `n` equally spaced, equally weighted phases starting at 0.
    pub fn uniform(n: usize, period: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("ensemble", "needs at least one phase"));
        }
        let e = PhaseEnsemble {
            phases: (0..n).map(|i| period * i as f64 / n as f64).collect(),
            weights: vec![1.0 / n as f64; n],
            period,
        };
        e.validate()?;
        Ok(e)
    }

    /// Equally weighted explicit phases, each reduced into `[0, period)`.
    pub fn explicit(phases: &[f64], period: f64) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::invalid("ensemble", "needs at least one phase"));
        }
        let e = PhaseEnsemble {
            phases: phases.iter().map(|p| p.rem_euclid(period)).collect(),
            weights: vec![1.0 / phases.len() as f64; phases.len()],
            period,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn single(psi: f64) -> Self {
        PhaseEnsemble {
            phases: vec![psi],
            weights: vec![1.0],
            period: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::invalid("ensemble.period", format!("must be positive, got {}", self.period)));
        }
        if self.phases.is_empty() || self.phases.len() != self.weights.len() {
            return Err(Error::invalid("ensemble", "phases and weights must be non-empty and of equal length"));
        }
        if let Some(p) = self.phases.iter().find(|p| !(0.0..self.period).contains(*p)) {
            return Err(Error::invalid("ensemble.phases", format!("{p} is outside [0, {})", self.period)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("ensemble.weights", "weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("ensemble.weights", format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Per-phase values in ensemble order, evaluated concurrently.
fn per_phase<T: Send>(ensemble: &PhaseEnsemble, f: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    ensemble.validate()?;
    ensemble.phases.par_iter().map(|&psi| f(psi)).collect()
}

pub fn phase_fidelities(sim: &Simulation, pulse: &Pulse, ensemble: &PhaseEnsemble) -> Result<Vec<f64>> {
    per_phase(ensemble, |psi| sim.fidelity(pulse, psi))
}

/// `Σ_i w_i Φ(ψ_i)`
pub fn robust_fidelity_with(sim: &Simulation, pulse: &Pulse, ensemble: &PhaseEnsemble) -> Result<f64> {
    let phis = phase_fidelities(sim, pulse, ensemble)?;
    Ok(phis.iter().zip(&ensemble.weights).map(|(p, w)| p * w).sum())
}

/// Weighted sum of per-phase gradients, reduced in ensemble order.
pub fn robust_gradient_with(sim: &Simulation, pulse: &Pulse, ensemble: &PhaseEnsemble) -> Result<GradientResult> {
    let parts = per_phase(ensemble, |psi| sim.gradient(pulse, psi))?;
    let mut out = GradientResult {
        fidelity: 0.0,
        grad_u: pulse.rows().iter().map(|r| vec![0.0; r.len()]).collect(),
        grad_s: None,
    };
    for (part, &w) in parts.iter().zip(&ensemble.weights) {
        out.fidelity += w * part.fidelity;
        for (acc, row) in out.grad_u.iter_mut().zip(&part.grad_u) {
            for (a, g) in acc.iter_mut().zip(row) {
                *a += w * g;
            }
        }
    }
    Ok(out)
}

pub fn robust_fidelity(problem: &ControlProblem, pulse: &Pulse, ensemble: &PhaseEnsemble) -> Result<f64> {
    robust_fidelity_with(&Simulation::new(problem)?, pulse, ensemble)
}

pub fn robust_gradient(problem: &ControlProblem, pulse: &Pulse, ensemble: &PhaseEnsemble) -> Result<GradientResult> {
    robust_gradient_with(&Simulation::new(problem)?, pulse, ensemble)
}
