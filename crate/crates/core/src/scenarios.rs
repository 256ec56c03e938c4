//! Benchmark problems: a driven qutrit with and without the rotating-wave
//! approximation, and a two-tone √iSWAP between detuned qubits.
//!
//! Parameters are given in GHz and ns and converted to rad/ns here.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::linalg::{c, pauli, ComplexMatrix, C64};
use crate::model::{Control, ControlProblem, GeneratorSampler, RotatingTerm, SampleConvention, TimeGrid};
use crate::transfer::TransferSpec;

/// `Γ = |0⟩⟨1| + √2 |1⟩⟨2|`
pub fn qutrit_lowering() -> ComplexMatrix {
    let mut g = ComplexMatrix::zeros(3);
    g[(0, 1)] = c(1.0, 0.0);
    g[(1, 2)] = c(2f64.sqrt(), 0.0);
    g
}

/// `(Γ + Γ†)/2` and `i(Γ - Γ†)/2`.
pub fn qutrit_drive_operators() -> (ComplexMatrix, ComplexMatrix) {
    let g = qutrit_lowering();
    let gd = g.adjoint();
    let hx = (&g + &gd).scale_real(0.5);
    let hy = (&g - &gd).scale(c(0.0, 0.5));
    (hx, hy)
}

/// X on `{|0⟩, |1⟩}`, identity on `|2⟩`.
pub fn qutrit_x_target() -> ComplexMatrix {
    ComplexMatrix::from_real(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]])
}

pub fn qutrit_projector() -> ComplexMatrix {
    ComplexMatrix::from_real(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]])
}

fn anharmonic_drift(anharmonicity_ghz: f64) -> ComplexMatrix {
    let mut d = ComplexMatrix::zeros(3);
    d[(2, 2)] = c(2.0 * PI * anharmonicity_ghz, 0.0);
    d
}

#[derive(Clone, Debug)]
pub struct Example1Params {
    /// `Δ/2π = (2ω₁ - ω₂)/2π` in GHz.
    pub anharmonicity_ghz: f64,
    pub pixels: usize,
    pub pixel_width: f64,
    pub n_sub: usize,
    pub transfer: TransferSpec,
    pub sampling: SampleConvention,
}

impl Default for Example1Params {
    fn default() -> Self {
        Example1Params {
            anharmonicity_ghz: -0.5,
            pixels: 4,
            pixel_width: 1.0,
            n_sub: 1,
            transfer: TransferSpec::PiecewiseConstant,
            sampling: SampleConvention::Midpoint,
        }
    }
}

/// Qutrit π pulse in the frame of the drive, rotating terms dropped.
pub fn build_example1_rwa(params: &Example1Params) -> ControlProblem {
    let (hx, hy) = qutrit_drive_operators();
    ControlProblem {
        drift: GeneratorSampler::constant(anharmonic_drift(params.anharmonicity_ghz)),
        controls: vec![
            Control::new("x", GeneratorSampler::constant(hx), params.transfer.clone()),
            Control::new("y", GeneratorSampler::constant(hy), params.transfer.clone()),
        ],
        target: qutrit_x_target(),
        projector: qutrit_projector(),
        subspace_dim: 2,
        grid: TimeGrid::new(params.pixels, params.pixel_width, params.n_sub),
        sampling: params.sampling,
        phase_period: None,
        amplitude_bound: None,
    }
}

#[derive(Clone, Debug)]
pub struct Example2Params {
    pub anharmonicity_ghz: f64,
    /// `ω₁/2π` in GHz.
    pub carrier_ghz: f64,
    pub pixels: usize,
    pub pixel_width: f64,
    pub n_sub: usize,
    pub transfer: TransferSpec,
    pub sampling: SampleConvention,
}

impl Default for Example2Params {
    fn default() -> Self {
        Example2Params {
            anharmonicity_ghz: -0.5,
            carrier_ghz: 2.0,
            pixels: 16,
            pixel_width: 0.125,
            n_sub: 100,
            transfer: TransferSpec::PiecewiseConstant,
            sampling: SampleConvention::Midpoint,
        }
    }
}

/// The same qutrit and gate with the counter-rotating terms kept. Each drive
/// operator picks up `(1 + e^{-2iω₁t - 2iψ})`, so the problem depends on
/// the carrier phase with period π.
pub fn build_example2_nonrwa(params: &Example2Params) -> ControlProblem {
    let g = qutrit_lowering();
    let w1 = 2.0 * PI * params.carrier_ghz;
    let generator = |coefficient: C64| {
        let constant = {
            let mut m = g.scale(coefficient);
            m.add_scaled(c(1.0, 0.0), &g.scale(coefficient).adjoint());
            m
        };
        GeneratorSampler::with_terms(
            constant,
            vec![RotatingTerm {
                operator: g.clone(),
                coefficient,
                frequency: 2.0 * w1,
                phase_multiplier: 2.0,
            }],
        )
    };
    ControlProblem {
        drift: GeneratorSampler::constant(anharmonic_drift(params.anharmonicity_ghz)),
        controls: vec![
            Control::new("x", generator(c(0.5, 0.0)), params.transfer.clone()),
            Control::new("y", generator(c(0.0, 0.5)), params.transfer.clone()),
        ],
        target: qutrit_x_target(),
        projector: qutrit_projector(),
        subspace_dim: 2,
        grid: TimeGrid::new(params.pixels, params.pixel_width, params.n_sub),
        sampling: params.sampling,
        phase_period: Some(PI),
        amplitude_bound: None,
    }
}

/// Identity on `|00⟩, |11⟩`; `[[1, i], [i, 1]]/√2` on `|01⟩, |10⟩`.
pub fn target_sqrt_iswap() -> ComplexMatrix {
    let mut u = ComplexMatrix::zeros(4);
    u[(0, 0)] = c(1.0, 0.0);
    u[(3, 3)] = c(1.0, 0.0);
    u[(1, 1)] = c(FRAC_1_SQRT_2, 0.0);
    u[(2, 2)] = c(FRAC_1_SQRT_2, 0.0);
    u[(1, 2)] = c(0.0, FRAC_1_SQRT_2);
    u[(2, 1)] = c(0.0, FRAC_1_SQRT_2);
    u
}

#[derive(Clone, Debug)]
pub struct Example3Params {
    /// `J/2π` in GHz.
    pub coupling_ghz: f64,
    /// `Δ/2π = (ω₁ - ω₂)/2π` in GHz.
    pub detuning_ghz: f64,
    pub gate_time: f64,
    pub pixel_width: f64,
    pub n_sub: usize,
    pub transfer: TransferSpec,
    pub sampling: SampleConvention,
}

impl Default for Example3Params {
    fn default() -> Self {
        Example3Params {
            coupling_ghz: 0.094,
            detuning_ghz: 0.5,
            gate_time: 20.0,
            pixel_width: 1.0,
            n_sub: 1,
            transfer: TransferSpec::PiecewiseConstant,
            sampling: SampleConvention::Midpoint,
        }
    }
}

/// Two exchange-coupled qubits in the frame of their own energies. Qubit 1
/// is driven at the mean qubit frequency, qubit 2 on resonance; the
/// coupling rotates at the detuning `Δ`.
pub fn build_example3_multitone(params: &Example3Params) -> ControlProblem {
    let id = ComplexMatrix::identity(2);
    let sp1 = pauli::raising().kron(&id);
    let delta = 2.0 * PI * params.detuning_ghz;
    let j = 2.0 * PI * params.coupling_ghz;
    let zero = ComplexMatrix::zeros(4);
    let qubit1 = |coefficient: C64| {
        GeneratorSampler::with_terms(
            zero.clone(),
            vec![RotatingTerm {
                operator: sp1.clone(),
                coefficient,
                frequency: delta / 2.0,
                phase_multiplier: 0.0,
            }],
        )
    };
    let drift = GeneratorSampler::with_terms(
        zero.clone(),
        vec![RotatingTerm {
            operator: pauli::raising().kron(&pauli::lowering()),
            coefficient: c(j, 0.0),
            frequency: -delta,
            phase_multiplier: 0.0,
        }],
    );
    let pixels = (params.gate_time / params.pixel_width).round() as usize;
    ControlProblem {
        drift,
        controls: vec![
            Control::new("x1", qubit1(c(0.5, 0.0)), params.transfer.clone()),
            Control::new("y1", qubit1(c(0.0, 0.5)), params.transfer.clone()),
            Control::new(
                "x2",
                GeneratorSampler::constant(id.kron(&pauli::x()).scale_real(0.5)),
                params.transfer.clone(),
            ),
            Control::new(
                "y2",
                GeneratorSampler::constant(id.kron(&pauli::y()).scale_real(0.5)),
                params.transfer.clone(),
            ),
        ],
        target: target_sqrt_iswap(),
        projector: ComplexMatrix::identity(4),
        subspace_dim: 4,
        grid: TimeGrid::new(pixels, params.pixel_width, params.n_sub),
        sampling: params.sampling,
        phase_period: None,
        amplitude_bound: None,
    }
}
