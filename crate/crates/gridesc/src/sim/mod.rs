//! Time-domain integration of the coupled differential-algebraic system.
//!
//! Differential states: synchronous-generator rotor angles and frequencies,
//! grid-forming inverter angles, frequencies and voltage-loop states.
//! Algebraic states: bus voltage phasors, re-solved from the power-balance
//! equations whenever the differential states move.
//!
//! The integrator is classical fixed-step RK4. Every derivative evaluation
//! (each RK stage) re-solves the network so the algebraic constraint holds
//! along the whole step, which keeps the scheme at full fourth order on the
//! reduced dynamics.

mod derivatives;
mod equilibrium;
mod integrate;
mod trajectory;

pub use derivatives::{gfm_derivatives, sg_derivatives};
pub use equilibrium::find_equilibrium;
pub use integrate::integrate;
pub use trajectory::FrequencyTrajectory;

use crate::model::C64;
use crate::network::{SolveError, SolveOptions};

/// Dynamic state of one synchronous generator.
///
/// `emf` is the constant internal voltage magnitude of the classical machine
/// model; it is set when the machine is initialized and carried along
/// unchanged by the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgState {
    /// Rotor angle δ (rad).
    pub rotor_angle: f64,
    /// Rotor frequency ω (pu).
    pub frequency: f64,
    /// Internal EMF magnitude (pu).
    pub emf: f64,
}

/// Dynamic state of one grid-forming inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmState {
    /// Internal voltage angle δ (rad).
    pub angle: f64,
    /// Inverter frequency ω (pu).
    pub frequency: f64,
    /// Voltage-loop error state V_e (pu).
    pub voltage_error: f64,
    /// Internal voltage magnitude E (pu).
    pub internal_voltage: f64,
}

/// Complete system state at one instant: the differential device states plus
/// the algebraic bus voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub sg_states: Vec<SgState>,
    pub gfm_states: Vec<GfmState>,
    pub bus_voltages: Vec<C64>,
    pub time: f64,
}

/// A scripted disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disturbance {
    /// Step the constant-power demand at a bus (1-based id) by (ΔP, ΔQ).
    LoadStep { bus: usize, delta_p: f64, delta_q: f64 },
    /// Switch the in-service branch between two buses out.
    BranchTrip { from: usize, to: usize },
    /// Step the active-power setpoint of one inverter (0-based index into
    /// the model's gfm list).
    SetpointStep { gfm: usize, delta_p_set: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceEvent {
    pub at_time: f64,
    pub kind: Disturbance,
}

/// Which frequency signal the trajectory records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FrequencyProbe {
    /// Inertia-weighted average over all devices: synchronous machines weigh
    /// in with M, inverters with their swing-equivalent τ/m_p.
    #[default]
    CenterOfInertia,
    /// The frequency of the device at one bus (1-based id).
    Bus(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Integration step (s).
    pub dt: f64,
    pub probe: FrequencyProbe,
    pub solve: SolveOptions,
    /// Divergence guard: largest tolerated |ω - ω0| (pu).
    pub max_freq_deviation: f64,
    /// Divergence guard: tolerated |V| band (pu).
    pub voltage_range: (f64, f64),
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 0.005,
            probe: FrequencyProbe::CenterOfInertia,
            solve: SolveOptions::default(),
            max_freq_deviation: 0.5,
            voltage_range: (0.2, 2.0),
        }
    }
}

/// Output of [`integrate`]: the recorded frequency signal plus the full state
/// history at the same cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub trajectory: FrequencyTrajectory,
    pub states: Vec<SystemState>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("state shape does not match the model: {0}")]
    Shape(String),
    #[error("invalid simulation setup: {0}")]
    BadOptions(String),
    #[error("event at t = {t}: {reason}")]
    BadEvent { t: f64, reason: String },
    #[error("network solve failed at t = {t:.6}: {source}")]
    Network { t: f64, source: SolveError },
    #[error("simulation diverged at t = {t:.6}: {what}")]
    Diverged { t: f64, what: String },
    #[error("no equilibrium found: {0}")]
    NoEquilibrium(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
