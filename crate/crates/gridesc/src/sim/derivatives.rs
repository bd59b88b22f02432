//! Device dynamics as pure functions of the local state and the measured
//! electrical quantities from the network solve.

use crate::model::{GfmParams, SgParams};

use super::{GfmState, SgState};

/// Swing dynamics of a synchronous generator.
///
/// Returns `(dδ/dt, dω/dt)` with
/// `dδ/dt = (ω - ω0)·ω_base` and
/// `dω/dt = [D·(ω0 - ω) + P_mech - P_e] / M`.
pub fn sg_derivatives(
    state: &SgState,
    params: &SgParams,
    electrical_power: f64,
    omega0: f64,
    omega_base_rad: f64,
) -> (f64, f64) {
    let d_delta = (state.frequency - omega0) * omega_base_rad;
    let d_omega = (params.damping * (omega0 - state.frequency) + params.mech_power
        - electrical_power)
        / params.inertia;
    (d_delta, d_omega)
}

/// Droop dynamics of a grid-forming inverter.
///
/// Returns `(dδ/dt, dω/dt, dV_e/dt, dE/dt)`:
///
/// ```text
/// dδ/dt  = (ω - ω0)·ω_base
/// dω/dt  = [ω0 - ω + m_p·(P_set - P)] / τ
/// dVe/dt = [V_set - V - Ve + m_q·(Q_set - Q)] / τ
/// dE/dt  = kpv·dVe/dt + kiv·Ve
/// ```
///
/// `p`, `q` are the measured injections at the terminal bus and `v` its
/// voltage magnitude.
pub fn gfm_derivatives(
    state: &GfmState,
    params: &GfmParams,
    p: f64,
    q: f64,
    v: f64,
    omega0: f64,
    omega_base_rad: f64,
) -> (f64, f64, f64, f64) {
    let d_delta = (state.frequency - omega0) * omega_base_rad;
    let d_omega =
        (omega0 - state.frequency + params.p_droop * (params.p_set - p)) / params.filter_tau;
    let d_ve = (params.v_set - v - state.voltage_error + params.q_droop * (params.q_set - q))
        / params.filter_tau;
    let d_e = params.kpv * d_ve + params.kiv * state.voltage_error;
    (d_delta, d_omega, d_ve, d_e)
}
