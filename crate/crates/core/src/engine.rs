//! Sub-pixel propagation, the projected gate fidelity and its gradient.
//!
//! The window is split into `M` slices of width `δt`; on slice `l` the
//! Hamiltonian `H_l = H_0(t_l) + Σ_k s_{k,l} H_k(t_l)` is held constant and
//! `U_l = exp(-i H_l δt)` is formed from its eigendecomposition. Forward
//! products `F_l = U_{l-1}⋯U_0` and backward products `B_l = U_{M-1}⋯U_{l+1}`
//! are cached so that every `∂Φ/∂s_{k,l}` costs a constant number of small
//! matrix products. Pixel gradients follow from the transfer matrices,
//! `∂Φ/∂u_{k,j} = Σ_l T_{k,l,j} ∂Φ/∂s_{k,l}`.

use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, ComplexMatrix, EigenDecomposition, C64};
use crate::model::{hamiltonian_at, ControlProblem, Pulse, Window};
use crate::transfer::{build_carrier, Carrier, TransferMatrix};

/// `|λ_m - λ_n| δt` below which the divided difference is replaced by its
/// coincident-eigenvalue limit.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// How `∂U_l/∂s` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Exact derivative in the eigenbasis of `H_l`.
    #[default]
    Exact,
    /// First-order `-i δt H_k U_l`, valid when `‖H_l δt‖ ≪ 1`.
    Approximate,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EngineOptions {
    pub derivative: DerivativeMode,
    /// Keep `∂Φ/∂s` in the gradient result.
    pub keep_field_gradient: bool,
}

/// One integration slice.
#[derive(Clone, Debug)]
pub struct Slice {
    pub time: f64,
    pub eig: EigenDecomposition,
    pub unitary: ComplexMatrix,
}

#[derive(Clone, Debug)]
pub struct PropagationRecord {
    pub window: Window,
    pub psi: f64,
    /// `s[k][l]`
    pub fields: Vec<Vec<f64>>,
    pub slices: Vec<Slice>,
    /// `F_0 = I, …, F_M = U(T)`; length `M + 1`.
    pub forward: Vec<ComplexMatrix>,
    /// `B_l = U_{M-1}⋯U_{l+1}`; length `M`.
    pub backward: Vec<ComplexMatrix>,
}

impl PropagationRecord {
    pub fn final_unitary(&self) -> &ComplexMatrix {
        self.forward.last().expect("forward products include F_0")
    }
}

#[derive(Clone, Debug)]
pub struct GradientResult {
    pub fidelity: f64,
    /// `∂Φ/∂u[k][j]` over free parameters.
    pub grad_u: Vec<Vec<f64>>,
    /// `∂Φ/∂s[k][l]`, when requested.
    pub grad_s: Option<Vec<Vec<f64>>>,
}

impl GradientResult {
    pub fn flat(&self) -> Vec<f64> {
        self.grad_u.iter().flatten().copied().collect()
    }
}

/// A problem prepared for repeated evaluation: window resolved and the
/// phase-independent part of every transfer matrix built once.
#[derive(Clone, Debug)]
pub struct Simulation {
    problem: ControlProblem,
    window: Window,
    bases: Vec<TransferMatrix>,
    carriers: Vec<Vec<Carrier>>,
    options: EngineOptions,
}

impl Simulation {
    pub fn new(problem: &ControlProblem) -> Result<Self> {
        Self::with_options(problem, EngineOptions::default())
    }

    pub fn with_options(problem: &ControlProblem, options: EngineOptions) -> Result<Self> {
        problem.grid.validate()?;
        let window = problem.window()?;
        let mut bases = Vec::with_capacity(problem.num_controls());
        let mut carriers = Vec::with_capacity(problem.num_controls());
        for ctrl in &problem.controls {
            let (base, stack) = ctrl.transfer.split();
            bases.push(base.build(&window, 0.0)?);
            carriers.push(stack.into_iter().cloned().collect());
        }
        Ok(Simulation {
            problem: problem.clone(),
            window,
            bases,
            carriers,
            options,
        })
    }

    pub fn problem(&self) -> &ControlProblem {
        &self.problem
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    /// Transfer matrices at carrier phase `psi`.
    pub fn transfers(&self, psi: f64) -> Vec<TransferMatrix> {
        self.bases
            .iter()
            .zip(&self.carriers)
            .map(|(base, stack)| {
                stack
                    .iter()
                    .fold(base.clone(), |m, carrier| build_carrier(&self.window, carrier, &m, psi))
            })
            .collect()
    }

    /// Field samples `s[k][l]` for `pulse` at phase `psi`.
    pub fn fields(&self, pulse: &Pulse, psi: f64) -> Result<Vec<Vec<f64>>> {
        self.fields_with(&self.transfers(psi), pulse)
    }

    fn fields_with(&self, transfers: &[TransferMatrix], pulse: &Pulse) -> Result<Vec<Vec<f64>>> {
        pulse.validate_for(&self.problem)?;
        transfers
            .iter()
            .enumerate()
            .map(|(k, t)| t.apply_free(pulse.row(k)))
            .collect()
    }

    fn slice_hamiltonian(&self, fields: &[Vec<f64>], l: usize, psi: f64) -> (f64, ComplexMatrix) {
        let t = self.window.sample_time(l);
        let s: Vec<f64> = fields.iter().map(|row| row[l]).collect();
        (t, hamiltonian_at(&self.problem, t, &s, psi))
    }

    fn slice(&self, fields: &[Vec<f64>], l: usize, psi: f64) -> Result<Slice> {
        let (time, h) = self.slice_hamiltonian(fields, l, psi);
        if !h.is_finite() {
            return Err(Error::NonFinite {
                what: format!("Hamiltonian at sub-pixel {l}"),
            });
        }
        let eig = eig_hermitian(&h)?;
        let unitary = eig.exp(self.window.grid.sub_width());
        Ok(Slice { time, eig, unitary })
    }

    /// `U(T)` without caching the partial products.
    pub fn final_unitary(&self, pulse: &Pulse, psi: f64) -> Result<ComplexMatrix> {
        let fields = self.fields(pulse, psi)?;
        let mut u = ComplexMatrix::identity(self.problem.dim());
        for l in 0..self.window.sub_pixels() {
            u = &self.slice(&fields, l, psi)?.unitary * &u;
        }
        Ok(u)
    }

    pub fn fidelity(&self, pulse: &Pulse, psi: f64) -> Result<f64> {
        let u = self.final_unitary(pulse, psi)?;
        Ok(fidelity_of(&self.problem, &u))
    }

    pub fn propagate(&self, pulse: &Pulse, psi: f64) -> Result<PropagationRecord> {
        let fields = self.fields(pulse, psi)?;
        self.propagate_fields(fields, psi)
    }

    fn propagate_fields(&self, fields: Vec<Vec<f64>>, psi: f64) -> Result<PropagationRecord> {
        let m = self.window.sub_pixels();
        let dim = self.problem.dim();
        let slices = (0..m)
            .map(|l| self.slice(&fields, l, psi))
            .collect::<Result<Vec<_>>>()?;
        let mut forward = Vec::with_capacity(m + 1);
        forward.push(ComplexMatrix::identity(dim));
        for s in &slices {
            let next = &s.unitary * forward.last().unwrap();
            forward.push(next);
        }
        let mut backward = vec![ComplexMatrix::identity(dim); m];
        for l in (0..m.saturating_sub(1)).rev() {
            backward[l] = &backward[l + 1] * &slices[l + 1].unitary;
        }
        Ok(PropagationRecord {
            window: self.window,
            psi,
            fields,
            slices,
            forward,
            backward,
        })
    }

    /// Fidelity and its exact gradient with respect to the free parameters.
    pub fn gradient(&self, pulse: &Pulse, psi: f64) -> Result<GradientResult> {
        let transfers = self.transfers(psi);
        let fields = self.fields_with(&transfers, pulse)?;
        let record = self.propagate_fields(fields, psi)?;
        let grad_s = self.field_gradient(&record);
        let grad_u = transfers
            .iter()
            .zip(&grad_s)
            .map(|(t, g)| t.contract_free(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientResult {
            fidelity: fidelity(&self.problem, &record),
            grad_u,
            grad_s: self.options.keep_field_gradient.then_some(grad_s),
        })
    }

    /// `∂Φ/∂s[k][l]` from a complete record.
    pub fn field_gradient(&self, record: &PropagationRecord) -> Vec<Vec<f64>> {
        let p = &self.problem;
        let d = p.subspace_dim as f64;
        let dt = record.window.grid.sub_width();
        let overlap = (&p.target.adjoint() * record.final_unitary()).trace_product(&p.projector);
        let prefactor = overlap.conj() * (2.0 / (d * d));
        // P U_ideal†, shared by every slice
        let pu = &p.projector * &p.target.adjoint();
        let m = record.slices.len();
        let mut grad = vec![vec![0.0; m]; p.num_controls()];
        for (l, slice) in record.slices.iter().enumerate() {
            // Tr(U_ideal† B_l dU F_l P) = Tr(G_l dU), G_l = F_l P U_ideal† B_l
            let g = &(&record.forward[l] * &pu) * &record.backward[l];
            match self.options.derivative {
                DerivativeMode::Exact => {
                    let g_eig = slice.eig.to_eigenbasis(&g);
                    let phases = divided_phases(&slice.eig.eigenvalues, dt);
                    for (k, ctrl) in p.controls.iter().enumerate() {
                        let hk = ctrl.generator.sample_cow(slice.time, record.psi);
                        let hk_eig = slice.eig.to_eigenbasis(&hk);
                        let n = hk_eig.dim();
                        let mut tr = C64::new(0.0, 0.0);
                        for a in 0..n {
                            for b in 0..n {
                                tr += g_eig[(b, a)] * hk_eig[(a, b)] * phases[a * n + b];
                            }
                        }
                        grad[k][l] = (prefactor * tr).re;
                    }
                }
                DerivativeMode::Approximate => {
                    let w = &slice.unitary * &g;
                    for (k, ctrl) in p.controls.iter().enumerate() {
                        let hk = ctrl.generator.sample_cow(slice.time, record.psi);
                        let tr = w.trace_product(&hk) * c(0.0, -dt);
                        grad[k][l] = (prefactor * tr).re;
                    }
                }
            }
        }
        grad
    }
}

/// `(e^{-iλ_m δt} - e^{-iλ_n δt}) / (λ_m - λ_n)` above the degeneracy
/// threshold.
pub fn offdiagonal_branch(lambda_m: f64, lambda_n: f64, dt: f64) -> C64 {
    (C64::from_polar(1.0, -lambda_m * dt) - C64::from_polar(1.0, -lambda_n * dt)) / (lambda_m - lambda_n)
}

/// The coincident limit `-i δt e^{-iλ δt}`, at the mean eigenvalue.
pub fn diagonal_branch(lambda_m: f64, lambda_n: f64, dt: f64) -> C64 {
    let lambda = 0.5 * (lambda_m + lambda_n);
    c(0.0, -dt) * C64::from_polar(1.0, -lambda * dt)
}

/// Eigenbasis factor multiplying `⟨m|H_k|n⟩` in `⟨m|∂U_l/∂s|n⟩`.
pub fn divided_phase(lambda_m: f64, lambda_n: f64, dt: f64) -> C64 {
    if (lambda_m - lambda_n).abs() * dt < DEGENERACY_THRESHOLD {
        diagonal_branch(lambda_m, lambda_n, dt)
    } else {
        offdiagonal_branch(lambda_m, lambda_n, dt)
    }
}

fn divided_phases(lambdas: &[f64], dt: f64) -> Vec<C64> {
    let n = lambdas.len();
    let mut out = Vec::with_capacity(n * n);
    for &lm in lambdas {
        for &ln in lambdas {
            out.push(divided_phase(lm, ln, dt));
        }
    }
    out
}

/// `∂U_l/∂s` for the slice with spectrum `eig`, with respect to the
/// coefficient of `hk`, in the original basis.
pub fn exact_step_derivative(eig: &EigenDecomposition, hk: &ComplexMatrix, dt: f64) -> ComplexMatrix {
    let n = eig.dim();
    let mut d = eig.to_eigenbasis(hk);
    for a in 0..n {
        for b in 0..n {
            d[(a, b)] *= divided_phase(eig.eigenvalues[a], eig.eigenvalues[b], dt);
        }
    }
    eig.from_eigenbasis(&d)
}

/// `Φ = |Tr(U_ideal† U P_Q)|² / d_Q²`.
pub fn fidelity_of(problem: &ControlProblem, u: &ComplexMatrix) -> f64 {
    let d = problem.subspace_dim as f64;
    let overlap = (&problem.target.adjoint() * u).trace_product(&problem.projector);
    overlap.norm_sqr() / (d * d)
}

pub fn fidelity(problem: &ControlProblem, record: &PropagationRecord) -> f64 {
    fidelity_of(problem, record.final_unitary())
}

pub fn propagate(problem: &ControlProblem, pulse: &Pulse, psi: f64) -> Result<PropagationRecord> {
    Simulation::new(problem)?.propagate(pulse, psi)
}

pub fn gradient(problem: &ControlProblem, pulse: &Pulse, psi: f64) -> Result<GradientResult> {
    Simulation::new(problem)?.gradient(pulse, psi)
}

/// Re-integrates `pulse` with `refinement` times as many sub-pixels (all
/// transfer matrices rebuilt on the finer grid) and returns Φ.
pub fn evaluate_on_fine_grid(problem: &ControlProblem, pulse: &Pulse, psi: f64, refinement: usize) -> Result<f64> {
    if refinement < 2 {
        return Err(Error::invalid("refinement", format!("must be at least 2, got {refinement}")));
    }
    let fine = problem.with_n_sub(problem.grid.n_sub * refinement);
    Simulation::new(&fine)?.fidelity(pulse, psi)
}
