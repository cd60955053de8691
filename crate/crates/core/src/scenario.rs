//! Scenario configuration and its resolution into concrete plant, gains and grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::{
    compute_gains, default_delta, default_lambda, estimate_ges, search_eps_nu, DesignParams, GainLedger,
    Requirement,
};
use crate::model::{self, ActuatorGrid, FeedbackSpec, GesCertificate, PlantSpec};
use crate::quantizer::QuantizerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum PlantChoice {
    /// `x' = a x + b u` with `kappa(x) = -k x`.
    ScalarLinear {
        #[serde(default)]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "one")]
        k: f64,
    },
    ScalarSine,
    PlanarLinear,
    /// `x' = A x + b u` with `kappa(x) = -K x`.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        k: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        certificate: Option<GesCertificate>,
    },
}

fn one() -> f64 {
    1.0
}

impl PlantChoice {
    /// Catalog entry by id (`scalar_linear`, `scalar_sine`, `planar_linear`).
    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "scalar_linear" => Some(PlantChoice::ScalarLinear { a: 0.0, b: 1.0, k: 1.0 }),
            "scalar_sine" => Some(PlantChoice::ScalarSine),
            "planar_linear" => Some(PlantChoice::PlanarLinear),
            _ => None,
        }
    }

    pub fn build(&self, delay: f64) -> Result<(PlantSpec, FeedbackSpec)> {
        match self {
            PlantChoice::ScalarLinear { a, b, k } => model::scalar_linear(*a, *b, *k, delay),
            PlantChoice::ScalarSine => model::scalar_sine(delay),
            PlantChoice::PlanarLinear => model::planar_linear(delay),
            PlantChoice::Linear { a, b, k, certificate } => {
                let (plant, fb) = model::linear("linear", a, b, k, delay, *certificate)?;
                if certificate.is_some() {
                    return Ok((plant, fb));
                }
                let ges = estimate_ges(&plant, &fb, 20.0, 64)?;
                Ok((plant, fb.with_certificate(ges)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    StateQ,
    InputQ,
    Nominal,
    OpenLoop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StateQ => "state_q",
            Mode::InputQ => "input_q",
            Mode::Nominal => "nominal",
            Mode::OpenLoop => "open_loop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "state_q" => Ok(Mode::StateQ),
            "input_q" => Ok(Mode::InputQ),
            "nominal" => Ok(Mode::Nominal),
            "open_loop" => Ok(Mode::OpenLoop),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }

    pub fn uses_supervisor(self) -> bool {
        self != Mode::Nominal
    }
}

/// How `u(0, .)` is held across one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputHold {
    #[default]
    Linear,
    Zoh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub value: f64,
}

/// Initial actuator state on `[0, D]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialInput {
    #[default]
    Zero,
    /// Right-continuous piecewise-constant function; each segment holds from
    /// its start until the next one.
    Segments { segments: Vec<Segment> },
    /// Grid samples, exactly `grid_n + 1` of them.
    Samples { values: Vec<f64> },
    /// Seeded random piecewise-constant function.
    Random { amplitude: f64, pieces: usize },
}

impl InitialInput {
    pub fn sample(&self, cells: usize, delay: f64, seed: u64) -> Result<ActuatorGrid> {
        match self {
            InitialInput::Zero => Ok(ActuatorGrid::zeros(cells)),
            InitialInput::Segments { segments } => {
                if segments.is_empty() {
                    return Err(Error::Config("u0 segments must not be empty".into()));
                }
                if segments.windows(2).any(|w| !(w[0].start < w[1].start)) {
                    return Err(Error::Config("u0 segment starts must be increasing".into()));
                }
                if segments.iter().any(|s| !s.value.is_finite() || !s.start.is_finite()) {
                    return Err(Error::Config("u0 segments must be finite".into()));
                }
                Ok(ActuatorGrid::from_fn(cells, delay, |x| segment_value(segments, x)))
            }
            InitialInput::Samples { values } => {
                if values.len() != cells + 1 {
                    return Err(Error::Config(format!(
                        "u0 has {} samples but the grid has {} nodes",
                        values.len(),
                        cells + 1
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("u0 samples must be finite".into()));
                }
                ActuatorGrid::from_samples(values.clone())
            }
            InitialInput::Random { amplitude, pieces } => {
                if *pieces == 0 || !(*amplitude >= 0.0) || !amplitude.is_finite() {
                    return Err(Error::Config("random u0 needs pieces >= 1 and a finite amplitude >= 0".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x75_30);
                let mut starts: Vec<f64> = (1..*pieces).map(|_| rng.gen_range(0.0..delay)).collect();
                starts.sort_by(f64::total_cmp);
                starts.insert(0, 0.0);
                let segments: Vec<Segment> = starts
                    .into_iter()
                    .map(|start| Segment {
                        start,
                        value: rng.gen_range(-1.0..=1.0) * amplitude,
                    })
                    .collect();
                Ok(ActuatorGrid::from_fn(cells, delay, |x| segment_value(&segments, x)))
            }
        }
    }
}

fn segment_value(segments: &[Segment], x: f64) -> f64 {
    segments
        .iter()
        .rev()
        .find(|s| s.start <= x)
        .map_or(0.0, |s| s.value)
}

/// Design choices; any left out are filled in during resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "one")]
    pub mu0: f64,
    #[serde(default = "one")]
    pub tau: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            lambda: None,
            eps: None,
            nu: None,
            delta: None,
            mu0: 1.0,
            tau: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub plant: PlantChoice,
    #[serde(default = "one")]
    pub delay: f64,
    pub quantizer: QuantizerSpec,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default = "default_grid")]
    pub grid_n: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub u0: InitialInput,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Steps between full actuator snapshots; 0 disables them.
    #[serde(default)]
    pub snapshot_stride: usize,
    /// Steps between `w` and mismatch diagnostics; 0 disables them.
    #[serde(default = "default_stride")]
    pub diagnostics_stride: usize,
    #[serde(default)]
    pub input_hold: InputHold,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_grid() -> usize {
    100
}

fn default_stride() -> usize {
    1
}

impl ScenarioConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn step(&self) -> f64 {
        self.delay / self.grid_n as f64
    }

    /// Steps needed to cover the horizon; the horizon is rounded up to the grid.
    pub fn steps(&self) -> usize {
        let raw = self.horizon / self.step();
        (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.grid_n < 10 {
            return Err(Error::Config(format!("grid_n = {} must be at least 10", self.grid_n)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config("horizon must be positive and finite".into()));
        }
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(Error::Config("delay must be positive and finite".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 must be finite".into()));
        }
        Ok(())
    }
}

/// A configuration with every default filled in and the gains computed.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// The configuration with the chosen design values written back, so that
    /// rerunning it reproduces the run.
    pub config: ScenarioConfig,
    pub plant: PlantSpec,
    pub feedback: FeedbackSpec,
    pub qspec: QuantizerSpec,
    pub design: DesignParams,
    pub ledger: GainLedger,
    pub u0: ActuatorGrid,
    pub warnings: Vec<String>,
}

pub fn resolve(config: &ScenarioConfig) -> Result<Resolved> {
    config.validate()?;
    let (plant, feedback) = config.plant.build(config.delay)?;
    if config.x0.len() != plant.n {
        return Err(Error::Config(format!(
            "x0 has {} entries but plant {} has dimension {}",
            config.x0.len(),
            plant.name,
            plant.n
        )));
    }
    let qspec = config.quantizer;
    qspec.validate().map_err(|e| Error::Config(e.to_string()))?;
    if config.mode == Mode::StateQ {
        qspec
            .coordinate_spec(plant.n)
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    let ges = feedback.ges;
    let d = config.design;
    let lambda = d.lambda.unwrap_or_else(|| default_lambda(plant.delay, ges.b3));
    let (eps, nu) = match (d.eps, d.nu) {
        (Some(e), Some(n)) => (e, n),
        (e, n) => {
            let (se, sn) = search_eps_nu(lambda, plant.delay, ges.b3)?;
            (e.unwrap_or(se), n.unwrap_or(sn))
        }
    };
    let delta = d.delta.unwrap_or_else(|| default_delta(ges.sigma, nu));
    let design = DesignParams {
        lambda,
        eps,
        nu,
        delta,
        range: qspec.range,
        error_bound: qspec.error_bound,
        mu0: d.mu0,
        tau: d.tau,
    };
    let ledger = compute_gains(&plant, &feedback, &design)?;

    let mut warnings = Vec::new();
    let required = match config.mode {
        Mode::StateQ => Some(Requirement::StateQuantization),
        Mode::InputQ => Some(Requirement::InputQuantization),
        _ => None,
    };
    if let Some(req) = required {
        if !ledger.satisfies(req) {
            warnings.push(format!("gain conditions for {} do not hold", config.mode.as_str()));
        }
    }

    let u0 = config.u0.sample(config.grid_n, plant.delay, config.seed)?;
    let mut resolved_config = config.clone();
    resolved_config.design = DesignConfig {
        lambda: Some(lambda),
        eps: Some(eps),
        nu: Some(nu),
        delta: Some(delta),
        mu0: d.mu0,
        tau: d.tau,
    };
    Ok(Resolved {
        config: resolved_config,
        plant,
        feedback,
        qspec,
        design,
        ledger,
        u0,
        warnings,
    })
}
