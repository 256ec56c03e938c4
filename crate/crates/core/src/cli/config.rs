//! Run configuration: parsing, defaults and resolution into problems.
//!
//! Frequencies and Hamiltonian entries are written in GHz and converted to
//! rad/ns here. Durations are in ns.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, C64};
use crate::model::{Control, ControlProblem, GeneratorSampler, SampleConvention, TimeGrid};
use crate::optimizer::OptimizerConfig;
use crate::robust::{PhaseEnsemble, DEFAULT_PHASE_SAMPLES, HELD_OUT_PHASES};
use crate::scenarios::{
    build_example1_rwa, build_example2_nonrwa, build_example3_multitone, Example1Params, Example2Params,
    Example3Params,
};
use crate::transfer::{Carrier, FrequencyResponse, TransferSpec};

pub const SCHEMA_VERSION: u32 = 1;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Example1,
    Example2,
    Example3,
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(ScenarioName::Example1),
            "example2" => Ok(ScenarioName::Example2),
            "example3" => Ok(ScenarioName::Example3),
            other => Err(Error::config(
                "scenario.name",
                format!("unknown scenario `{other}`; expected example1, example2 or example3"),
            )),
        }
    }
}

/// A named benchmark with optional overrides. Unset fields take the
/// scenario's defaults and are filled in by [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    /// Δ/2π of the qutrit (examples 1 and 2), GHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anharmonicity_ghz: Option<f64>,
    /// ω₁/2π (example 2), GHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_ghz: Option<f64>,
    /// J/2π (example 3), GHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_ghz: Option<f64>,
    /// Δ/2π between the qubits (example 3), GHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_time_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_width_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sub: Option<usize>,
}

impl ScenarioConfig {
    pub fn named(name: ScenarioName) -> Self {
        ScenarioConfig {
            name,
            anharmonicity_ghz: None,
            carrier_ghz: None,
            coupling_ghz: None,
            detuning_ghz: None,
            gate_time_ns: None,
            pixel_width_ns: None,
            n_sub: None,
        }
    }

    /// Every field set, from the scenario defaults where absent.
    fn filled(&self) -> Self {
        let mut out = self.clone();
        let (pw, gate, n_sub) = match self.name {
            ScenarioName::Example1 => {
                let d = Example1Params::default();
                out.anharmonicity_ghz.get_or_insert(d.anharmonicity_ghz);
                (d.pixel_width, d.pixels as f64 * d.pixel_width, d.n_sub)
            }
            ScenarioName::Example2 => {
                let d = Example2Params::default();
                out.anharmonicity_ghz.get_or_insert(d.anharmonicity_ghz);
                out.carrier_ghz.get_or_insert(d.carrier_ghz);
                (d.pixel_width, d.pixels as f64 * d.pixel_width, d.n_sub)
            }
            ScenarioName::Example3 => {
                let d = Example3Params::default();
                out.coupling_ghz.get_or_insert(d.coupling_ghz);
                out.detuning_ghz.get_or_insert(d.detuning_ghz);
                (d.pixel_width, d.gate_time, d.n_sub)
            }
        };
        out.pixel_width_ns.get_or_insert(pw);
        out.gate_time_ns.get_or_insert(gate);
        out.n_sub.get_or_insert(n_sub);
        out
    }
}

/// One matrix entry: a real number or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(re) => c(re, 0.0),
            Entry::Complex([re, im]) => c(re, im),
        }
    }
}

pub type MatrixConfig = Vec<Vec<Entry>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InlineControl {
    pub name: String,
    /// Dimensionless Hermitian generator multiplying the amplitude in rad/ns.
    pub operator: MatrixConfig,
}

/// A time-independent problem given by its matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    /// Drift Hamiltonian, GHz (multiplied by 2π).
    pub drift_ghz: MatrixConfig,
    pub controls: Vec<InlineControl>,
    pub target: MatrixConfig,
    /// Defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<MatrixConfig>,
    pub gate_time_ns: f64,
    pub pixel_width_ns: f64,
    #[serde(default = "one")]
    pub n_sub: usize,
}

fn one() -> usize {
    1
}

/// Transfer model shared by all controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferConfig {
    PiecewiseConstant,
    CubicSpline,
    /// Gaussian filter of 3 dB bandwidth `bandwidth_ghz`.
    Gaussian { bandwidth_ghz: f64 },
    Butterworth { cutoff_ghz: f64, order: u32 },
    /// Sine components at the given frequencies.
    Fourier { frequencies_ghz: Vec<f64> },
    /// `cos(2π f t + ψ)` or `sin(2π f t + ψ)` on top of `base`.
    Carrier {
        waveform: Waveform,
        frequency_ghz: f64,
        base: Box<TransferConfig>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Cosine,
    Sine,
}

impl TransferConfig {
    pub fn to_spec(&self) -> TransferSpec {
        match self {
            TransferConfig::PiecewiseConstant => TransferSpec::PiecewiseConstant,
            TransferConfig::CubicSpline => TransferSpec::CubicSpline,
            TransferConfig::Gaussian { bandwidth_ghz } => TransferSpec::gaussian_from_bandwidth(*bandwidth_ghz),
            TransferConfig::Butterworth { cutoff_ghz, order } => TransferSpec::GeneralFilter {
                response: FrequencyResponse::Butterworth {
                    cutoff: TWO_PI * cutoff_ghz,
                    order: *order,
                },
            },
            TransferConfig::Fourier { frequencies_ghz } => TransferSpec::Fourier {
                frequencies: frequencies_ghz.iter().map(|f| TWO_PI * f).collect(),
            },
            TransferConfig::Carrier {
                waveform,
                frequency_ghz,
                base,
            } => {
                let omega = TWO_PI * frequency_ghz;
                let carrier = match waveform {
                    Waveform::Cosine => Carrier::Cosine { omega },
                    Waveform::Sine => Carrier::Sine { omega },
                };
                TransferSpec::carrier(carrier, base.to_spec())
            }
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{field}"), format!("must be positive, got {v}")))
            }
        };
        match self {
            TransferConfig::Gaussian { bandwidth_ghz } => positive("bandwidth_ghz", *bandwidth_ghz),
            TransferConfig::Butterworth { cutoff_ghz, order } => {
                positive("cutoff_ghz", *cutoff_ghz)?;
                if *order == 0 {
                    return Err(Error::config(format!("{path}.order"), "must be at least 1"));
                }
                Ok(())
            }
            TransferConfig::Fourier { frequencies_ghz } => {
                if frequencies_ghz.is_empty() {
                    return Err(Error::config(format!("{path}.frequencies_ghz"), "must not be empty"));
                }
                Ok(())
            }
            TransferConfig::Carrier { frequency_ghz, base, .. } => {
                if !frequency_ghz.is_finite() {
                    return Err(Error::config(format!("{path}.frequency_ghz"), "must be finite"));
                }
                base.check(&format!("{path}.base"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Number of equally spaced phases; ignored when `phases` is set.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Explicit phases in rad.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    /// Defaults to the problem's phase period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

fn default_samples() -> usize {
    DEFAULT_PHASE_SAMPLES
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GateTime,
    NSub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Gate times in ns or sub-pixel counts, strictly increasing.
    pub values: Vec<f64>,
    /// Start each point from the previous optimum. Defaults to on for gate
    /// time sweeps and off for n_sub sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<InlineProblem>,
    #[serde(default = "default_transfer")]
    pub transfer: TransferConfig,
    /// Transfer model used to score pulses; defaults to `transfer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_transfer: Option<TransferConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Training phases for phase-dependent problems; defaults to a uniform
    /// grid when the problem depends on the carrier phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    /// Phases at which errors are reported for phase-dependent problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_phases: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Fine-grid factor for error evaluation.
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Fixed sub-pixel count for error evaluation, overriding
    /// `refinement × n_sub` so that different resolutions share one grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_n_sub: Option<usize>,
    #[serde(default)]
    pub sample_at_left_edge: bool,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_transfer() -> TransferConfig {
    TransferConfig::PiecewiseConstant
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_refinement() -> usize {
    8
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario: None,
            problem: None,
            transfer: default_transfer(),
            evaluation_transfer: None,
            optimizer: OptimizerConfig::default(),
            ensemble: None,
            evaluation_phases: None,
            sweep: None,
            output_dir: default_output(),
            refinement: default_refinement(),
            truth_n_sub: None,
            sample_at_left_edge: false,
        }
    }
}

/// Command-line overrides applied on top of a file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioName>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub refinement: Option<usize>,
    pub restarts: Option<usize>,
    pub sample_at_left_edge: bool,
}

/// Deserializes a configuration, reporting the JSON path of the first
/// offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn matrix(rows: &MatrixConfig, path: &str, scale: f64) -> Result<ComplexMatrix> {
    let values: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(|e| e.value() * scale).collect()).collect();
    ComplexMatrix::from_rows(&values).map_err(|e| Error::config(path, e.to_string()))
}

fn pixels_for(gate_time: f64, pixel_width: f64, path: &str) -> Result<usize> {
    if !(gate_time > 0.0) || !(pixel_width > 0.0) {
        return Err(Error::config(path, "gate time and pixel width must be positive"));
    }
    let n = gate_time / pixel_width;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 * rounded {
        return Err(Error::config(
            path,
            format!("gate time {gate_time} ns is not a whole number of {pixel_width} ns pixels"),
        ));
    }
    Ok(rounded as usize)
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(name) = o.scenario {
            match &mut self.scenario {
                Some(s) if s.name == name => {}
                _ => {
                    self.scenario = Some(ScenarioConfig::named(name));
                    self.problem = None;
                }
            }
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.optimizer.seed = seed;
        }
        if let Some(r) = o.refinement {
            self.refinement = r;
        }
        if let Some(r) = o.restarts {
            self.optimizer.restarts = r;
        }
        if o.sample_at_left_edge {
            self.sample_at_left_edge = true;
        }
    }

    /// Checks cross-field rules and fills every default, so that the
    /// result can be echoed and re-run unchanged.
    pub fn resolve(mut self) -> Result<RunConfig> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        match (&self.scenario, &self.problem) {
            (Some(_), Some(_)) => return Err(Error::config("$", "give either `scenario` or `problem`, not both")),
            (None, None) => return Err(Error::config("$", "one of `scenario` or `problem` is required")),
            _ => {}
        }
        if let Some(s) = &self.scenario {
            self.scenario = Some(s.filled());
        }
        self.transfer.check("transfer")?;
        if let Some(t) = &self.evaluation_transfer {
            t.check("evaluation_transfer")?;
        }
        if self.refinement < 2 {
            return Err(Error::config("refinement", format!("must be at least 2, got {}", self.refinement)));
        }
        self.optimizer.validate().map_err(|e| match e {
            Error::InvalidProblem { field, reason } => Error::config(field, reason),
            other => other,
        })?;
        if let Some(sweep) = &mut self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values", "must not be empty"));
            }
            if let Some(i) = sweep.values.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::config(format!("sweep.values[{}]", i + 1), "values must be strictly increasing"));
            }
            if sweep.axis == SweepAxis::NSub {
                if let Some(i) = sweep.values.iter().position(|v| *v < 1.0 || v.fract() != 0.0) {
                    return Err(Error::config(format!("sweep.values[{i}]"), "n_sub values must be positive integers"));
                }
            }
            sweep.warm_start.get_or_insert(sweep.axis == SweepAxis::GateTime);
        }
        let base = self.problem_at(None)?;
        if base.phase_dependent() {
            let period = base.phase_period.unwrap_or(TWO_PI);
            let ens = self.ensemble.get_or_insert(EnsembleConfig {
                samples: DEFAULT_PHASE_SAMPLES,
                phases: None,
                period: None,
            });
            ens.period.get_or_insert(period);
            self.evaluation_phases.get_or_insert(HELD_OUT_PHASES.to_vec());
        }
        if let Some(e) = &self.ensemble {
            self.ensemble_from(e)?;
        }
        if let Some(truth) = self.truth_n_sub {
            let finest = match &self.sweep {
                Some(s) if s.axis == SweepAxis::NSub => *s.values.last().unwrap() as usize,
                _ => base.grid.n_sub,
            };
            if truth < self.refinement * finest {
                return Err(Error::config(
                    "truth_n_sub",
                    format!("must be at least refinement × n_sub = {}", self.refinement * finest),
                ));
            }
        }
        Ok(self)
    }

    fn ensemble_from(&self, e: &EnsembleConfig) -> Result<PhaseEnsemble> {
        let period = e.period.unwrap_or(TWO_PI);
        let ens = match &e.phases {
            Some(p) => PhaseEnsemble::explicit(p, period),
            None => PhaseEnsemble::uniform(e.samples, period),
        };
        ens.map_err(|err| Error::config("ensemble", err.to_string()))
    }

    pub fn training_ensemble(&self) -> Result<Option<PhaseEnsemble>> {
        self.ensemble.as_ref().map(|e| self.ensemble_from(e)).transpose()
    }

    /// Phases at which errors are reported: `[0]` for phase-independent
    /// problems.
    pub fn report_phases(&self) -> Vec<f64> {
        self.evaluation_phases.clone().unwrap_or_else(|| vec![0.0])
    }

    fn sampling(&self) -> SampleConvention {
        if self.sample_at_left_edge {
            SampleConvention::LeftEdge
        } else {
            SampleConvention::Midpoint
        }
    }

    /// The problem at an optional sweep value, with the training transfer.
    pub fn problem_at(&self, sweep_value: Option<f64>) -> Result<ControlProblem> {
        self.build(sweep_value, &self.transfer)
    }

    /// As [`Self::problem_at`] with the evaluation transfer.
    pub fn evaluation_problem_at(&self, sweep_value: Option<f64>) -> Result<ControlProblem> {
        self.build(sweep_value, self.evaluation_transfer.as_ref().unwrap_or(&self.transfer))
    }

    fn build(&self, sweep_value: Option<f64>, transfer: &TransferConfig) -> Result<ControlProblem> {
        let spec = transfer.to_spec();
        let sampling = self.sampling();
        let axis = self.sweep.as_ref().map(|s| s.axis);
        let (gate_override, n_sub_override) = match (axis, sweep_value) {
            (Some(SweepAxis::GateTime), Some(v)) => (Some(v), None),
            (Some(SweepAxis::NSub), Some(v)) => (None, Some(v as usize)),
            _ => (None, None),
        };
        let problem = if let Some(s) = &self.scenario {
            let s = s.filled();
            let pw = s.pixel_width_ns.unwrap();
            let gate = gate_override.or(s.gate_time_ns).unwrap();
            let pixels = pixels_for(gate, pw, "scenario.gate_time_ns")?;
            let n_sub = n_sub_override.or(s.n_sub).unwrap();
            match s.name {
                ScenarioName::Example1 => build_example1_rwa(&Example1Params {
                    anharmonicity_ghz: s.anharmonicity_ghz.unwrap(),
                    pixels,
                    pixel_width: pw,
                    n_sub,
                    transfer: spec,
                    sampling,
                }),
                ScenarioName::Example2 => build_example2_nonrwa(&Example2Params {
                    anharmonicity_ghz: s.anharmonicity_ghz.unwrap(),
                    carrier_ghz: s.carrier_ghz.unwrap(),
                    pixels,
                    pixel_width: pw,
                    n_sub,
                    transfer: spec,
                    sampling,
                }),
                ScenarioName::Example3 => build_example3_multitone(&Example3Params {
                    coupling_ghz: s.coupling_ghz.unwrap(),
                    detuning_ghz: s.detuning_ghz.unwrap(),
                    gate_time: pixels as f64 * pw,
                    pixel_width: pw,
                    n_sub,
                    transfer: spec,
                    sampling,
                }),
            }
        } else {
            let p = self.problem.as_ref().expect("resolve checks that a problem is present");
            let drift = matrix(&p.drift_ghz, "problem.drift_ghz", TWO_PI)?;
            let dim = drift.dim();
            let target = matrix(&p.target, "problem.target", 1.0)?;
            let projector = match &p.projector {
                Some(m) => matrix(m, "problem.projector", 1.0)?,
                None => ComplexMatrix::identity(dim),
            };
            let controls = p
                .controls
                .iter()
                .enumerate()
                .map(|(k, ctrl)| {
                    let op = matrix(&ctrl.operator, &format!("problem.controls[{k}].operator"), 1.0)?;
                    Ok(Control::new(ctrl.name.clone(), GeneratorSampler::constant(op), spec.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let gate = gate_override.unwrap_or(p.gate_time_ns);
            ControlProblem {
                drift: GeneratorSampler::constant(drift),
                controls,
                subspace_dim: projector.trace().re.round() as usize,
                target,
                projector,
                grid: TimeGrid::new(
                    pixels_for(gate, p.pixel_width_ns, "problem.gate_time_ns")?,
                    p.pixel_width_ns,
                    n_sub_override.unwrap_or(p.n_sub),
                ),
                sampling,
                phase_period: None,
                amplitude_bound: None,
            }
        };
        let problem = if transfer.phase_dependent_carrier() && problem.phase_period.is_none() {
            ControlProblem {
                phase_period: Some(TWO_PI),
                ..problem
            }
        } else {
            problem
        };
        crate::model::validate_problem(&problem).map_err(|e| match e {
            Error::InvalidProblem { field, reason } => {
                let prefix = if self.scenario.is_some() { "scenario" } else { "problem" };
                Error::config(format!("{prefix}.{field}"), reason)
            }
            other => other,
        })?;
        Ok(problem)
    }
}

impl TransferConfig {
    fn phase_dependent_carrier(&self) -> bool {
        matches!(self, TransferConfig::Carrier { .. })
    }
}

/// The JSON schema of [`RunConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}
