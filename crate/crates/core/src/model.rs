//! The control problem: generators, target, projector and time grids.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, C64, HERMITIAN_TOL};
use crate::transfer::TransferSpec;

/// Where inside a sub-pixel the time-dependent quantities are sampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleConvention {
    /// `t_l = (l + 1/2) δt`
    #[default]
    Midpoint,
    /// `t_l = l δt`
    LeftEdge,
}

/// Two-level time grid: `pixels` control pixels of width `pixel_width` (ns),
/// each split into `n_sub` integration slices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub pixels: usize,
    pub pixel_width: f64,
    pub n_sub: usize,
}

impl TimeGrid {
    pub fn new(pixels: usize, pixel_width: f64, n_sub: usize) -> Self {
        TimeGrid {
            pixels,
            pixel_width,
            n_sub,
        }
    }

    pub fn sub_pixels(&self) -> usize {
        self.pixels * self.n_sub
    }

    /// `δt = Δt / n_sub`; never set independently.
    pub fn sub_width(&self) -> f64 {
        self.pixel_width / self.n_sub as f64
    }

    pub fn duration(&self) -> f64 {
        self.pixels as f64 * self.pixel_width
    }

    pub fn with_n_sub(&self, n_sub: usize) -> Self {
        TimeGrid { n_sub, ..*self }
    }

    pub fn padded(&self, padding: usize) -> Self {
        TimeGrid {
            pixels: self.pixels + 2 * padding,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("TimeGrid", reason));
        if self.pixels == 0 {
            return bad("pixel count must be at least 1".into());
        }
        if self.n_sub == 0 {
            return bad("n_sub must be at least 1".into());
        }
        if !(self.pixel_width > 0.0) || !self.pixel_width.is_finite() {
            return bad(format!("pixel width must be positive, got {}", self.pixel_width));
        }
        let rebuilt = self.sub_width() * self.n_sub as f64;
        if (rebuilt - self.pixel_width).abs() > 1e-12 * self.pixel_width {
            return bad(format!(
                "n_sub * δt = {rebuilt} does not reconstruct Δt = {}",
                self.pixel_width
            ));
        }
        Ok(())
    }

    /// Checks a separately declared sub-pixel width against the derived one.
    pub fn check_declared_sub_width(&self, declared: f64) -> Result<()> {
        let derived = self.sub_width();
        if (declared * self.n_sub as f64 - self.pixel_width).abs() > 1e-12 * self.pixel_width {
            return Err(Error::invalid(
                "TimeGrid",
                format!(
                    "declared δt = {declared} ns but Δt / n_sub = {derived} ns; n_sub * δt must equal Δt"
                ),
            ));
        }
        Ok(())
    }
}

/// The simulated window: the full sub-pixel grid (free pixels plus zero
/// margins) and the sampling convention. Time is measured from the start of
/// the window, so pixel `j` of the window covers `[jΔt, (j+1)Δt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub grid: TimeGrid,
    /// Zero-control pixels on each side of the free pixels.
    pub padding: usize,
    pub convention: SampleConvention,
}

impl Window {
    pub fn new(grid: TimeGrid, padding: usize, convention: SampleConvention) -> Self {
        Window {
            grid,
            padding,
            convention,
        }
    }

    /// Window around `free` pixels with `padding` zero pixels on each side.
    pub fn around(free: TimeGrid, padding: usize, convention: SampleConvention) -> Self {
        Window::new(free.padded(padding), padding, convention)
    }

    pub fn free_pixels(&self) -> usize {
        self.grid.pixels - 2 * self.padding
    }

    pub fn sub_pixels(&self) -> usize {
        self.grid.sub_pixels()
    }

    pub fn sample_time(&self, l: usize) -> f64 {
        let dt = self.grid.sub_width();
        match self.convention {
            SampleConvention::Midpoint => (l as f64 + 0.5) * dt,
            SampleConvention::LeftEdge => l as f64 * dt,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.sub_pixels()).map(|l| self.sample_time(l)).collect()
    }
}

/// `coefficient · e^{-i(ω t + m ψ)} · A + h.c.`
#[derive(Clone, Debug, PartialEq)]
pub struct RotatingTerm {
    pub operator: ComplexMatrix,
    pub coefficient: C64,
    /// ω in rad/ns.
    pub frequency: f64,
    /// m, the multiple of the carrier phase ψ.
    pub phase_multiplier: f64,
}

impl RotatingTerm {
    fn factor(&self, t: f64, psi: f64) -> C64 {
        self.coefficient * C64::from_polar(1.0, -(self.frequency * t + self.phase_multiplier * psi))
    }
}

type SamplerFn = dyn Fn(f64, f64) -> ComplexMatrix + Send + Sync;

/// A Hermitian operator-valued function of time `t` (ns) and carrier phase
/// `ψ` (rad).
#[derive(Clone)]
pub enum GeneratorSampler {
    /// A Hermitian constant plus rotating terms with their conjugates.
    Terms {
        constant: ComplexMatrix,
        rotating: Vec<RotatingTerm>,
    },
    /// Arbitrary user function. Must be pure and return Hermitian matrices.
    Custom {
        dim: usize,
        time_dependent: bool,
        phase_dependent: bool,
        f: Arc<SamplerFn>,
    },
}

impl fmt::Debug for GeneratorSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSampler::Terms { constant, rotating } => f
                .debug_struct("Terms")
                .field("constant", constant)
                .field("rotating", rotating)
                .finish(),
            GeneratorSampler::Custom {
                dim,
                time_dependent,
                phase_dependent,
                ..
            } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("time_dependent", time_dependent)
                .field("phase_dependent", phase_dependent)
                .finish_non_exhaustive(),
        }
    }
}

impl GeneratorSampler {
    pub fn constant(m: ComplexMatrix) -> Self {
        GeneratorSampler::Terms {
            constant: m,
            rotating: Vec::new(),
        }
    }

    pub fn with_terms(constant: ComplexMatrix, rotating: Vec<RotatingTerm>) -> Self {
        GeneratorSampler::Terms { constant, rotating }
    }

    pub fn custom(
        dim: usize,
        time_dependent: bool,
        phase_dependent: bool,
        f: impl Fn(f64, f64) -> ComplexMatrix + Send + Sync + 'static,
    ) -> Self {
        GeneratorSampler::Custom {
            dim,
            time_dependent,
            phase_dependent,
            f: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSampler::Terms { constant, .. } => constant.dim(),
            GeneratorSampler::Custom { dim, .. } => *dim,
        }
    }

    pub fn time_dependent(&self) -> bool {
        match self {
            GeneratorSampler::Terms { rotating, .. } => rotating.iter().any(|r| r.frequency != 0.0),
            GeneratorSampler::Custom { time_dependent, .. } => *time_dependent,
        }
    }

    pub fn phase_dependent(&self) -> bool {
        match self {
            GeneratorSampler::Terms { rotating, .. } => {
                rotating.iter().any(|r| r.phase_multiplier != 0.0)
            }
            GeneratorSampler::Custom { phase_dependent, .. } => *phase_dependent,
        }
    }

    pub fn sample(&self, t: f64, psi: f64) -> ComplexMatrix {
        self.sample_cow(t, psi).into_owned()
    }

    /// Borrows the matrix when the generator is a plain constant.
    pub fn sample_cow(&self, t: f64, psi: f64) -> Cow<'_, ComplexMatrix> {
        match self {
            GeneratorSampler::Terms { constant, rotating } if rotating.is_empty() => {
                Cow::Borrowed(constant)
            }
            _ => {
                let mut out = ComplexMatrix::zeros(self.dim());
                self.accumulate(t, psi, 1.0, &mut out);
                Cow::Owned(out)
            }
        }
    }

    /// `out += scale · H(t, ψ)`.
    pub fn accumulate(&self, t: f64, psi: f64, scale: f64, out: &mut ComplexMatrix) {
        match self {
            GeneratorSampler::Terms { constant, rotating } => {
                out.add_scaled(c(scale, 0.0), constant);
                for term in rotating {
                    let z = term.factor(t, psi) * scale;
                    let a = &term.operator;
                    let n = a.dim();
                    for i in 0..n {
                        for j in 0..n {
                            let v = z * a[(i, j)];
                            out[(i, j)] += v;
                            out[(j, i)] += v.conj();
                        }
                    }
                }
            }
            GeneratorSampler::Custom { f, .. } => out.add_scaled(c(scale, 0.0), &f(t, psi)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Control {
    pub name: String,
    pub generator: GeneratorSampler,
    pub transfer: TransferSpec,
}

impl Control {
    pub fn new(name: impl Into<String>, generator: GeneratorSampler, transfer: TransferSpec) -> Self {
        Control {
            name: name.into(),
            generator,
            transfer,
        }
    }
}

/// Everything needed to evaluate and optimize a gate.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub drift: GeneratorSampler,
    pub controls: Vec<Control>,
    pub target: ComplexMatrix,
    pub projector: ComplexMatrix,
    pub subspace_dim: usize,
    /// Free control pixels.
    pub grid: TimeGrid,
    pub sampling: SampleConvention,
    /// Period of ψ in rad, when any generator or carrier depends on it.
    pub phase_period: Option<f64>,
    /// Optional clipping bound `|u| ≤ u_max` (rad/ns), enforced by the
    /// optimizer's line search.
    pub amplitude_bound: Option<f64>,
}

impl ControlProblem {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    /// Zero-control margin on each side: the widest any transfer needs.
    pub fn padding(&self) -> Result<usize> {
        let mut pad = 0;
        for ctrl in &self.controls {
            pad = pad.max(ctrl.transfer.padding(self.grid.pixel_width)?);
        }
        Ok(pad)
    }

    pub fn window(&self) -> Result<Window> {
        Ok(Window::around(self.grid, self.padding()?, self.sampling))
    }

    /// Free parameters of control `k`: one per pixel, or one per Fourier
    /// component.
    pub fn parameter_count(&self, k: usize) -> usize {
        self.controls[k]
            .transfer
            .parameter_count()
            .unwrap_or(self.grid.pixels)
    }

    pub fn pulse_shape(&self) -> Vec<usize> {
        (0..self.num_controls()).map(|k| self.parameter_count(k)).collect()
    }

    pub fn phase_dependent(&self) -> bool {
        self.drift.phase_dependent()
            || self
                .controls
                .iter()
                .any(|c| c.generator.phase_dependent() || c.transfer.phase_dependent())
    }

    pub fn with_n_sub(&self, n_sub: usize) -> Self {
        ControlProblem {
            grid: self.grid.with_n_sub(n_sub),
            ..self.clone()
        }
    }

    pub fn with_pixels(&self, pixels: usize) -> Self {
        ControlProblem {
            grid: TimeGrid {
                pixels,
                ..self.grid
            },
            ..self.clone()
        }
    }

    pub fn with_transfer(&self, spec: TransferSpec) -> Self {
        let mut out = self.clone();
        for ctrl in &mut out.controls {
            ctrl.transfer = spec.clone();
        }
        out
    }

    pub fn with_sampling(&self, sampling: SampleConvention) -> Self {
        ControlProblem {
            sampling,
            ..self.clone()
        }
    }
}

/// `H_{0,l} + Σ_k s[k] H_{k,l}` at sub-pixel `l` of `window`, phase `psi`.
pub fn sample_hamiltonian(
    problem: &ControlProblem,
    window: &Window,
    s: &[f64],
    l: usize,
    psi: f64,
) -> Result<ComplexMatrix> {
    if s.len() != problem.num_controls() {
        return Err(Error::DimensionMismatch {
            what: "field samples",
            expected: problem.num_controls(),
            found: s.len(),
        });
    }
    if l >= window.sub_pixels() {
        return Err(Error::DimensionMismatch {
            what: "sub-pixel index",
            expected: window.sub_pixels(),
            found: l,
        });
    }
    if let Some(k) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("field sample for control {k} at sub-pixel {l}"),
        });
    }
    Ok(hamiltonian_at(problem, window.sample_time(l), s, psi))
}

pub(crate) fn hamiltonian_at(problem: &ControlProblem, t: f64, s: &[f64], psi: f64) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(problem.dim());
    problem.drift.accumulate(t, psi, 1.0, &mut h);
    for (ctrl, &amp) in problem.controls.iter().zip(s) {
        if amp != 0.0 {
            ctrl.generator.accumulate(t, psi, amp, &mut h);
        }
    }
    h
}

/// Control amplitudes `u[k][j]` in rad/ns, one row per control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    rows: Vec<Vec<f64>>,
}

impl Pulse {
    pub fn zeros(shape: &[usize]) -> Self {
        Pulse {
            rows: shape.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Pulse { rows }
    }

    pub fn constant(shape: &[usize], value: f64) -> Self {
        Pulse {
            rows: shape.iter().map(|&n| vec![value; n]).collect(),
        }
    }

    pub fn from_flat(shape: &[usize], flat: &[f64]) -> Result<Self> {
        let total: usize = shape.iter().sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                what: "flattened pulse",
                expected: total,
                found: flat.len(),
            });
        }
        let mut rows = Vec::with_capacity(shape.len());
        let mut offset = 0;
        for &n in shape {
            rows.push(flat[offset..offset + n].to_vec());
            offset += n;
        }
        Ok(Pulse { rows })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn controls(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.rows[k][j]
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Checks shape against `problem`, finiteness and the amplitude bound.
    pub fn validate_for(&self, problem: &ControlProblem) -> Result<()> {
        let expected = problem.pulse_shape();
        if self.controls() != expected.len() {
            return Err(Error::DimensionMismatch {
                what: "pulse controls",
                expected: expected.len(),
                found: self.controls(),
            });
        }
        for (k, (&want, row)) in expected.iter().zip(&self.rows).enumerate() {
            if row.len() != want {
                return Err(Error::DimensionMismatch {
                    what: "pulse pixels",
                    expected: want,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("pulse entry u[{k}][{j}]"),
                });
            }
        }
        if let Some(bound) = problem.amplitude_bound {
            if self.max_abs() > bound {
                return Err(Error::invalid(
                    "Pulse",
                    format!("amplitude {} exceeds bound {bound}", self.max_abs()),
                ));
            }
        }
        Ok(())
    }
}

/// Residuals reported by [`validate_problem`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub max_hermiticity_residual: f64,
    pub projector_idempotency_residual: f64,
    pub projector_hermiticity_residual: f64,
    pub projector_trace: f64,
    pub target_unitarity_residual: f64,
    pub padding: usize,
    pub sub_pixels: usize,
}

/// Checks every structural invariant of `problem`. Time-dependent
/// generators are probed at a spread of sample times and phases.
pub fn validate_problem(problem: &ControlProblem) -> Result<Diagnostics> {
    let dim = problem.dim();
    if dim < 2 {
        return Err(Error::invalid("target", "dimension must be at least 2"));
    }
    problem.grid.validate()?;
    if problem.controls.is_empty() {
        return Err(Error::invalid("controls", "at least one control is required"));
    }
    let mut diag = Diagnostics::default();

    let window = problem.window()?;
    diag.padding = window.padding;
    diag.sub_pixels = window.sub_pixels();

    let m = window.sub_pixels();
    let mut probe_times: Vec<f64> = [0, m / 3, m / 2, m.saturating_sub(1)]
        .iter()
        .map(|&l| window.sample_time(l))
        .collect();
    probe_times.push(0.37 * window.grid.duration());
    let probe_phases = [0.0, 0.731, 2.1];

    let mut check_generator = |name: String, g: &GeneratorSampler| -> Result<()> {
        if g.dim() != dim {
            return Err(Error::invalid(
                name,
                format!("dimension {} does not match target dimension {dim}", g.dim()),
            ));
        }
        for &t in &probe_times {
            for &psi in &probe_phases {
                let h = g.sample(t, psi);
                if !h.is_finite() {
                    return Err(Error::invalid(name, format!("non-finite sample at t={t}")));
                }
                let r = h.hermiticity_residual();
                diag.max_hermiticity_residual = diag.max_hermiticity_residual.max(r);
                if r > HERMITIAN_TOL * h.max_abs().max(1.0) {
                    return Err(Error::invalid(
                        name,
                        format!("not Hermitian at t={t}, psi={psi}: max |H - H^dagger| = {r:e}"),
                    ));
                }
            }
        }
        if !g.time_dependent() {
            let a = g.sample(probe_times[0], 0.0);
            let b = g.sample(probe_times[probe_times.len() - 1], 0.0);
            if a.max_abs_diff(&b) > 0.0 {
                return Err(Error::invalid(name, "flagged time-independent but varies with t"));
            }
        }
        if !g.phase_dependent() {
            let a = g.sample(probe_times[0], 0.0);
            let b = g.sample(probe_times[0], 1.234);
            if a.max_abs_diff(&b) > 0.0 {
                return Err(Error::invalid(name, "flagged phase-independent but varies with psi"));
            }
        }
        Ok(())
    };
    check_generator("drift".into(), &problem.drift)?;
    for (k, ctrl) in problem.controls.iter().enumerate() {
        check_generator(format!("controls[{k}].generator"), &ctrl.generator)?;
        ctrl.transfer
            .validate()
            .map_err(|e| Error::invalid(format!("controls[{k}].transfer"), e.to_string()))?;
    }

    let p = &problem.projector;
    if p.dim() != dim {
        return Err(Error::invalid("P_Q", format!("dimension {} != {dim}", p.dim())));
    }
    diag.projector_hermiticity_residual = p.hermiticity_residual();
    diag.projector_idempotency_residual = (p * p).max_abs_diff(p);
    diag.projector_trace = p.trace().re;
    if diag.projector_hermiticity_residual > 1e-12 {
        return Err(Error::invalid("P_Q", "projector is not Hermitian"));
    }
    if diag.projector_idempotency_residual > 1e-12 {
        return Err(Error::invalid("P_Q", "projector is not idempotent"));
    }
    if (diag.projector_trace - problem.subspace_dim as f64).abs() > 1e-12 || p.trace().im.abs() > 1e-12
    {
        return Err(Error::invalid(
            "P_Q",
            format!(
                "trace {} does not equal subspace dimension d_Q = {}",
                diag.projector_trace, problem.subspace_dim
            ),
        ));
    }
    if problem.subspace_dim == 0 {
        return Err(Error::invalid("P_Q", "subspace dimension must be positive"));
    }

    let u = &problem.target;
    let restricted = &(&(p * &u.adjoint()) * u) * p;
    diag.target_unitarity_residual = restricted.max_abs_diff(p);
    if diag.target_unitarity_residual > 1e-12 {
        return Err(Error::invalid(
            "U_ideal",
            format!(
                "not unitary on the P_Q subspace: residual {:e}",
                diag.target_unitarity_residual
            ),
        ));
    }

    if let Some(period) = problem.phase_period {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::invalid("phase_period", format!("must be positive, got {period}")));
        }
    }
    if let Some(bound) = problem.amplitude_bound {
        if !(bound > 0.0) {
            return Err(Error::invalid("amplitude_bound", format!("must be positive, got {bound}")));
        }
    }
    Ok(diag)
}
