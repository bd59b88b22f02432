//! Grid transient simulation with droop-controlled grid-forming inverters,
//! multi-metric disturbance scoring, and relay-based extremum-seeking droop
//! tuning.
//!
//! The crate is organized around five layers:
//!
//! - [`model`] — static network description (buses, branches, device
//!   parameters) and the nodal admittance matrix.
//! - [`network`] — the algebraic solve: Newton-Raphson power balance over
//!   bus voltage phasors, with devices as voltage sources behind reactances.
//! - [`sim`] — the differential-algebraic integration: swing dynamics for
//!   synchronous generators, droop dynamics for grid-forming inverters,
//!   disturbance events, and frequency trajectory recording.
//! - [`metrics`] — the four transient-performance metrics and their
//!   weighted total cost.
//! - [`esc`] — the relay-based extremum-seeking optimizer that tunes the
//!   active-power droop coefficient one disturbance at a time.
//!
//! [`scenario`] ties the layers into reproducible experiments (droop sweeps,
//! topology-switching cases, fixed-droop comparisons), [`config`] loads the
//! experiment configuration file, and [`export`] writes the CSV artifacts.
//!
//! The narrative guide lives in the `book/` directory of the repository; its
//! code snippets compile and run as doctests of this crate.

pub mod config;
pub mod esc;
pub mod export;
pub mod metrics;
pub mod model;
pub mod network;
pub mod scenario;
pub mod sim;
pub mod systems;

pub use esc::{EscConfig, EscState, EscTrace};
pub use metrics::{CostWeights, MetricConfig, PerformanceMetrics};
pub use model::{Branch, Bus, BusKind, GfmParams, NetworkModel, SgParams, Ybus};
pub use network::{solve_network, NetworkInputs, NetworkSolution, SolveOptions};
pub use sim::{
    find_equilibrium, integrate, Disturbance, DisturbanceEvent, FrequencyProbe,
    FrequencyTrajectory, GfmState, SgState, SimOptions, SimResult, SystemState,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network-model.md")]
    mod network_model {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/extremum-seeking.md")]
    mod extremum_seeking {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
