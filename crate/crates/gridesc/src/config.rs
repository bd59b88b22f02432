//! Experiment configuration file.
//!
//! One TOML document drives every harness entry point. All fields carry the
//! library defaults, so an empty document is a valid configuration. Unknown
//! keys and type errors are rejected at load with the parser's line/column
//! diagnostics; semantic violations name the offending section and field.

use serde::Deserialize;

use crate::esc::EscConfig;
use crate::metrics::{CostWeights, MetricConfig};
use crate::model::NetworkModel;
use crate::scenario::{CaseSegment, CaseSpec, HarnessError, ScenarioSpec};
use crate::sim::{FrequencyProbe, SimOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config file is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value ({section}.{field}): {reason}")]
    Invalid { section: &'static str, field: &'static str, reason: String },
}

fn invalid(section: &'static str, field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { section, field, reason: reason.into() }
}

/// Frequency probe selector: the string `"coi"` or a bus id.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ProbeChoice {
    Bus(usize),
    Named(String),
}

impl Default for ProbeChoice {
    fn default() -> Self {
        ProbeChoice::Named("coi".into())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Analysis window length (s).
    pub window: f64,
    /// Integration step (s).
    pub dt: f64,
    pub probe: ProbeChoice,
    /// Newton tolerance on the largest power mismatch (pu).
    pub network_tolerance: f64,
    pub max_solver_iterations: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            window: 10.0,
            dt: 0.005,
            probe: ProbeChoice::default(),
            network_tolerance: 1e-8,
            max_solver_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSection {
    /// Load-step magnitude as a fraction of the total active load.
    pub fraction: f64,
    /// Event time relative to window start (s).
    pub at_time: f64,
    /// Stepped bus (default: the largest load bus).
    pub bus: Option<usize>,
    /// Reactive step as a fraction of the total reactive load.
    pub q_fraction: f64,
    pub randomize_sign: bool,
    pub randomize_bus: bool,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        Self {
            fraction: 0.10,
            at_time: 0.5,
            bus: None,
            q_fraction: 0.0,
            randomize_sign: false,
            randomize_bus: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub name: String,
    pub branch_removals: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { name: "baseline".into(), branch_removals: Vec::new(), seed: 0 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub v_inertia: f64,
    pub final_fraction: f64,
    /// Explicit normalization references; when absent they are computed per
    /// scenario at the midpoint of the droop search range.
    pub normalization_refs: Option<[f64; 4]>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { v_inertia: 1.0, final_fraction: 0.2, normalization_refs: None }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EscSection {
    pub x_min: f64,
    pub x_max: f64,
    pub dt: f64,
    pub dwell_limit: f64,
    pub gain_divisor: f64,
    /// Starting droop for optimizer runs.
    pub x0: f64,
    pub iterations: usize,
}

impl Default for EscSection {
    fn default() -> Self {
        let esc = EscConfig::default();
        Self {
            x_min: esc.x_min,
            x_max: esc.x_max,
            dt: esc.dt,
            dwell_limit: esc.dwell_limit,
            gain_divisor: esc.gain_divisor,
            x0: 0.0125,
            iterations: 60,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { points: 40 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseSegmentSection {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub branch_removals: Vec<(usize, usize)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CaseSection {
    pub segments: Vec<CaseSegmentSection>,
}

/// The whole experiment configuration.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulation: SimulationSection,
    pub disturbance: DisturbanceSection,
    pub scenario: ScenarioSection,
    pub metrics: MetricsSection,
    pub weights: CostWeights,
    pub esc: EscSection,
    pub sweep: SweepSection,
    pub case: CaseSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.simulation;
        if !(s.window > 0.0) {
            return Err(invalid("simulation", "window", "must be > 0"));
        }
        if !(s.dt > 0.0 && s.dt < s.window) {
            return Err(invalid("simulation", "dt", "must satisfy 0 < dt < window"));
        }
        if !(s.network_tolerance > 0.0) {
            return Err(invalid("simulation", "network_tolerance", "must be > 0"));
        }
        if s.max_solver_iterations == 0 {
            return Err(invalid("simulation", "max_solver_iterations", "must be > 0"));
        }
        if let ProbeChoice::Named(name) = &s.probe {
            if name != "coi" {
                return Err(invalid("simulation", "probe", "must be \"coi\" or a bus id"));
            }
        }

        let d = &self.disturbance;
        if !d.fraction.is_finite() || !d.q_fraction.is_finite() {
            return Err(invalid("disturbance", "fraction", "must be finite"));
        }
        if !(d.at_time >= 0.0 && d.at_time <= s.window) {
            return Err(invalid("disturbance", "at_time", "must lie within the window"));
        }

        let m = &self.metrics;
        if !(m.v_inertia > 0.0) {
            return Err(invalid("metrics", "v_inertia", "must be > 0"));
        }
        if !(m.final_fraction > 0.0 && m.final_fraction < 1.0) {
            return Err(invalid("metrics", "final_fraction", "must lie in (0, 1)"));
        }
        if let Some(refs) = &m.normalization_refs {
            if refs.iter().any(|r| !(*r > 0.0)) {
                return Err(invalid("metrics", "normalization_refs", "must all be > 0"));
            }
        }

        self.weights
            .validate()
            .map_err(|e| invalid("weights", "w1..w4", e.to_string()))?;

        self.esc_config()
            .validate()
            .map_err(|e| invalid("esc", "bounds", e.to_string()))?;
        let e = &self.esc;
        if !(e.x0 >= e.x_min && e.x0 <= e.x_max) {
            return Err(invalid("esc", "x0", "must lie within [x_min, x_max]"));
        }
        if e.iterations == 0 {
            return Err(invalid("esc", "iterations", "must be > 0"));
        }

        if self.sweep.points == 0 {
            return Err(invalid("sweep", "points", "must be > 0"));
        }
        if self.case.segments.iter().any(|seg| seg.iterations == 0) {
            return Err(invalid("case", "segments", "iterations must be > 0"));
        }
        Ok(())
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            dt: self.simulation.dt,
            probe: match &self.simulation.probe {
                ProbeChoice::Named(_) => FrequencyProbe::CenterOfInertia,
                ProbeChoice::Bus(id) => FrequencyProbe::Bus(*id),
            },
            solve: crate::network::SolveOptions {
                tolerance: self.simulation.network_tolerance,
                max_iterations: self.simulation.max_solver_iterations,
            },
            ..SimOptions::default()
        }
    }

    pub fn esc_config(&self) -> EscConfig {
        EscConfig {
            x_min: self.esc.x_min,
            x_max: self.esc.x_max,
            dt: self.esc.dt,
            dwell_limit: self.esc.dwell_limit,
            gain_divisor: self.esc.gain_divisor,
        }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            v_inertia: self.metrics.v_inertia,
            final_fraction: self.metrics.final_fraction,
            normalization_refs: self.metrics.normalization_refs.unwrap_or([1.0; 4]),
            ..MetricConfig::default()
        }
    }

    /// Whether normalization references should be computed per scenario.
    pub fn auto_normalize(&self) -> bool {
        self.metrics.normalization_refs.is_none()
    }

    /// The droop grid for sweeps, spanning the ESC search range.
    pub fn droop_grid(&self) -> Vec<f64> {
        crate::scenario::droop_grid(self.esc.x_min, self.esc.x_max, self.sweep.points)
    }

    /// Build the configured single scenario on a model.
    pub fn scenario(&self, model: NetworkModel) -> Result<ScenarioSpec, HarnessError> {
        let d = &self.disturbance;
        let mut spec = ScenarioSpec::load_step(
            self.scenario.name.clone(),
            model,
            d.bus,
            d.fraction,
            d.at_time,
            self.simulation.window,
        )?;
        if d.q_fraction != 0.0 {
            let (_, total_q) = spec.model.total_load();
            for ev in &mut spec.schedule {
                if let crate::sim::Disturbance::LoadStep { delta_q, .. } = &mut ev.kind {
                    *delta_q = d.q_fraction * total_q;
                }
            }
        }
        spec.seed = self.scenario.seed;
        spec.randomize_sign = d.randomize_sign;
        spec.randomize_bus = d.randomize_bus;
        Ok(spec.with_removals(&self.scenario.branch_removals))
    }

    /// Build the configured switching case on a model.
    pub fn case(&self, model: NetworkModel) -> Result<CaseSpec, HarnessError> {
        if self.case.segments.is_empty() {
            return Err(HarnessError::BadInput(
                "config has no [[case.segments]] entries".into(),
            ));
        }
        let mut segments = Vec::with_capacity(self.case.segments.len());
        for (i, seg) in self.case.segments.iter().enumerate() {
            let name = seg
                .name
                .clone()
                .unwrap_or_else(|| format!("segment-{}", i + 1));
            let scenario = self
                .scenario(model.clone())?
                .with_name(name)
                .with_removals(&seg.branch_removals);
            segments.push(CaseSegment { scenario, iterations: seg.iterations });
        }
        Ok(CaseSpec { segments, esc: self.esc_config(), x0: self.esc.x0 })
    }
}
