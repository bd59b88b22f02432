//! Fixed-step RK4 integration of the device dynamics with an algebraic
//! network re-solve inside every derivative evaluation.

use crate::model::{C64, NetworkModel, Ybus};
use crate::network::{solve_network, DeviceLink, NetworkInputs, SolveOptions};

use super::derivatives::{gfm_derivatives, sg_derivatives};
use super::trajectory::FrequencyTrajectory;
use super::{
    Disturbance, DisturbanceEvent, FrequencyProbe, GfmState, SgState, SimError, SimOptions,
    SimResult, SystemState,
};

/// Mutable working copy of everything an event can touch.
struct WorkingNet {
    model: NetworkModel,
    ybus: Ybus,
    demand_p: Vec<f64>,
    demand_q: Vec<f64>,
}

impl WorkingNet {
    fn new(model: &NetworkModel) -> Result<Self, SimError> {
        let ybus = model.build_ybus()?;
        Ok(Self {
            model: model.clone(),
            ybus,
            demand_p: model.buses.iter().map(|b| b.load_p).collect(),
            demand_q: model.buses.iter().map(|b| b.load_q).collect(),
        })
    }

    fn apply(&mut self, event: &DisturbanceEvent) -> Result<(), SimError> {
        match event.kind {
            Disturbance::LoadStep { bus, delta_p, delta_q } => {
                let idx = self.model.bus_index(bus).ok_or(SimError::BadEvent {
                    t: event.at_time,
                    reason: format!("bus {bus} does not exist"),
                })?;
                self.demand_p[idx] += delta_p;
                self.demand_q[idx] += delta_q;
            }
            Disturbance::BranchTrip { from, to } => {
                self.model =
                    self.model.remove_branch(from, to).map_err(|e| SimError::BadEvent {
                        t: event.at_time,
                        reason: e.to_string(),
                    })?;
                self.ybus = self.model.build_ybus()?;
            }
            Disturbance::SetpointStep { gfm, delta_p_set } => {
                let params = self.model.gfms.get_mut(gfm).ok_or(SimError::BadEvent {
                    t: event.at_time,
                    reason: format!("gfm index {gfm} out of range"),
                })?;
                params.p_set += delta_p_set;
            }
        }
        Ok(())
    }
}

/// Packed differential state: `[δ, ω]` per machine then `[δ, ω, Ve, E]` per
/// inverter. The constant machine EMF magnitudes ride alongside.
struct Layout {
    n_sg: usize,
    n_gfm: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 * self.n_sg + 4 * self.n_gfm
    }

    fn pack(&self, state: &SystemState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        for sg in &state.sg_states {
            x.push(sg.rotor_angle);
            x.push(sg.frequency);
        }
        for gfm in &state.gfm_states {
            x.push(gfm.angle);
            x.push(gfm.frequency);
            x.push(gfm.voltage_error);
            x.push(gfm.internal_voltage);
        }
        x
    }

    fn unpack(&self, x: &[f64], emf: &[f64], voltages: Vec<C64>, time: f64) -> SystemState {
        let mut sg_states = Vec::with_capacity(self.n_sg);
        for i in 0..self.n_sg {
            sg_states.push(SgState {
                rotor_angle: x[2 * i],
                frequency: x[2 * i + 1],
                emf: emf[i],
            });
        }
        let base = 2 * self.n_sg;
        let mut gfm_states = Vec::with_capacity(self.n_gfm);
        for j in 0..self.n_gfm {
            gfm_states.push(GfmState {
                angle: x[base + 4 * j],
                frequency: x[base + 4 * j + 1],
                voltage_error: x[base + 4 * j + 2],
                internal_voltage: x[base + 4 * j + 3],
            });
        }
        SystemState { sg_states, gfm_states, bus_voltages: voltages, time }
    }
}

fn device_links(model: &NetworkModel, layout: &Layout, emf: &[f64], x: &[f64]) -> Vec<DeviceLink> {
    let mut devices = Vec::with_capacity(layout.n_sg + layout.n_gfm);
    for (i, sg) in model.sgs.iter().enumerate() {
        devices.push(DeviceLink {
            bus: sg.bus - 1,
            emf: emf[i],
            angle: x[2 * i],
            reactance: sg.transient_reactance,
        });
    }
    let base = 2 * layout.n_sg;
    for (j, gfm) in model.gfms.iter().enumerate() {
        devices.push(DeviceLink {
            bus: gfm.bus - 1,
            emf: x[base + 4 * j + 3],
            angle: x[base + 4 * j],
            reactance: gfm.coupling_reactance,
        });
    }
    devices
}

/// Solve the network at the given differential state and return the packed
/// derivative vector plus the solved voltages.
#[allow(clippy::too_many_arguments)]
fn dynamics(
    net: &WorkingNet,
    layout: &Layout,
    emf: &[f64],
    x: &[f64],
    warm: &[C64],
    solve_opts: &SolveOptions,
    omega0: f64,
    omega_base: f64,
    t: f64,
) -> Result<(Vec<f64>, Vec<C64>), SimError> {
    let inputs = NetworkInputs {
        demand_p: net.demand_p.clone(),
        demand_q: net.demand_q.clone(),
        devices: device_links(&net.model, layout, emf, x),
    };
    let sol = solve_network(&net.ybus, &inputs, warm, solve_opts)
        .map_err(|source| SimError::Network { t, source })?;

    let mut dx = vec![0.0; layout.len()];
    for (i, sg) in net.model.sgs.iter().enumerate() {
        let state = SgState { rotor_angle: x[2 * i], frequency: x[2 * i + 1], emf: emf[i] };
        let (dd, dw) = sg_derivatives(&state, sg, sol.device_p[i], omega0, omega_base);
        dx[2 * i] = dd;
        dx[2 * i + 1] = dw;
    }
    let base = 2 * layout.n_sg;
    for (j, gfm) in net.model.gfms.iter().enumerate() {
        let state = GfmState {
            angle: x[base + 4 * j],
            frequency: x[base + 4 * j + 1],
            voltage_error: x[base + 4 * j + 2],
            internal_voltage: x[base + 4 * j + 3],
        };
        let dev = layout.n_sg + j;
        let v = sol.voltages[gfm.bus - 1].norm();
        let (dd, dw, dve, de) = gfm_derivatives(
            &state,
            gfm,
            sol.device_p[dev],
            sol.device_q[dev],
            v,
            omega0,
            omega_base,
        );
        dx[base + 4 * j] = dd;
        dx[base + 4 * j + 1] = dw;
        dx[base + 4 * j + 2] = dve;
        dx[base + 4 * j + 3] = de;
    }
    Ok((dx, sol.voltages))
}

/// Aggregate frequency in pu for the configured probe.
fn probe_frequency(
    model: &NetworkModel,
    probe: &FrequencyProbe,
    layout: &Layout,
    x: &[f64],
) -> Result<f64, SimError> {
    match probe {
        FrequencyProbe::CenterOfInertia => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, sg) in model.sgs.iter().enumerate() {
                num += sg.inertia * x[2 * i + 1];
                den += sg.inertia;
            }
            let base = 2 * layout.n_sg;
            for (j, gfm) in model.gfms.iter().enumerate() {
                let w = gfm.filter_tau / gfm.p_droop;
                num += w * x[base + 4 * j + 1];
                den += w;
            }
            Ok(num / den)
        }
        FrequencyProbe::Bus(id) => {
            if let Some(i) = model.sgs.iter().position(|sg| sg.bus == *id) {
                return Ok(x[2 * i + 1]);
            }
            if let Some(j) = model.gfms.iter().position(|g| g.bus == *id) {
                return Ok(x[2 * layout.n_sg + 4 * j + 1]);
            }
            Err(SimError::BadOptions(format!("no device at probe bus {id}")))
        }
    }
}

fn check_guard(
    model: &NetworkModel,
    layout: &Layout,
    x: &[f64],
    voltages: &[C64],
    opts: &SimOptions,
    t: f64,
) -> Result<(), SimError> {
    let omega0 = model.base.omega0;
    for (i, sg) in model.sgs.iter().enumerate() {
        let w = x[2 * i + 1];
        if !w.is_finite() || (w - omega0).abs() > opts.max_freq_deviation {
            return Err(SimError::Diverged {
                t,
                what: format!("machine at bus {} reached ω = {w:.4} pu", sg.bus),
            });
        }
    }
    let base = 2 * layout.n_sg;
    for (j, gfm) in model.gfms.iter().enumerate() {
        let w = x[base + 4 * j + 1];
        if !w.is_finite() || (w - omega0).abs() > opts.max_freq_deviation {
            return Err(SimError::Diverged {
                t,
                what: format!("inverter at bus {} reached ω = {w:.4} pu", gfm.bus),
            });
        }
    }
    for (idx, v) in voltages.iter().enumerate() {
        let m = v.norm();
        if !m.is_finite() || m < opts.voltage_range.0 || m > opts.voltage_range.1 {
            return Err(SimError::Diverged {
                t,
                what: format!("bus {} voltage reached {m:.4} pu", idx + 1),
            });
        }
    }
    Ok(())
}

/// Integrate the system over `window`, applying `events` at their (snapped)
/// timestamps, and record the frequency trajectory plus the state history.
///
/// The initial state must satisfy the algebraic constraints; start from
/// [`super::find_equilibrium`] or a previously recorded state. Event times
/// snap to the nearest step boundary.
pub fn integrate(
    model: &NetworkModel,
    initial: &SystemState,
    events: &[DisturbanceEvent],
    window: (f64, f64),
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    let (t1, t2) = window;
    if !(opts.dt > 0.0) || !(t2 > t1) {
        return Err(SimError::BadOptions(format!(
            "need dt > 0 and t2 > t1, got dt = {}, window = [{t1}, {t2}]",
            opts.dt
        )));
    }
    let layout = Layout { n_sg: model.sgs.len(), n_gfm: model.gfms.len() };
    if initial.sg_states.len() != layout.n_sg || initial.gfm_states.len() != layout.n_gfm {
        return Err(SimError::Shape(format!(
            "model has {} machines and {} inverters, state has {} and {}",
            layout.n_sg,
            layout.n_gfm,
            initial.sg_states.len(),
            initial.gfm_states.len()
        )));
    }

    let n_samples = FrequencyTrajectory::expected_samples(window, opts.dt);
    let n_steps = n_samples - 1;

    // Snap events to step boundaries, preserving input order within a step.
    let mut by_step: Vec<(usize, DisturbanceEvent)> = Vec::with_capacity(events.len());
    for ev in events {
        let k = ((ev.at_time - t1) / opts.dt).round() as i64;
        if k < 0 || k as usize > n_steps {
            return Err(SimError::BadEvent {
                t: ev.at_time,
                reason: "event time outside the simulation window".into(),
            });
        }
        by_step.push((k as usize, *ev));
    }
    by_step.sort_by_key(|(k, _)| *k);

    let mut net = WorkingNet::new(model)?;
    let emf: Vec<f64> = initial.sg_states.iter().map(|s| s.emf).collect();
    let mut x = layout.pack(initial);
    let mut warm: Vec<C64> = if initial.bus_voltages.len() == model.n_buses() {
        initial.bus_voltages.clone()
    } else {
        vec![C64::new(1.0, 0.0); model.n_buses()]
    };

    let omega0 = model.base.omega0;
    let omega_base = model.omega_base_rad();
    let dt = opts.dt;

    let mut samples = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    let mut next_event = 0usize;

    for k in 0..=n_steps {
        let t = t1 + k as f64 * dt;
        if k > 0 {
            // RK4 step from t-dt to t on the current topology.
            let (k1, v1) = dynamics(
                &net, &layout, &emf, &x, &warm, &opts.solve, omega0, omega_base, t - dt,
            )?;
            warm = v1;
            let y2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
            let (k2, _) = dynamics(
                &net, &layout, &emf, &y2, &warm, &opts.solve, omega0, omega_base, t - 0.5 * dt,
            )?;
            let y3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
            let (k3, _) = dynamics(
                &net, &layout, &emf, &y3, &warm, &opts.solve, omega0, omega_base, t - 0.5 * dt,
            )?;
            let y4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
            let (k4, _) =
                dynamics(&net, &layout, &emf, &y4, &warm, &opts.solve, omega0, omega_base, t)?;
            for i in 0..x.len() {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }

        while next_event < by_step.len() && by_step[next_event].0 == k {
            net.apply(&by_step[next_event].1)?;
            next_event += 1;
        }

        // Re-solve at the new differential state (and new topology, if an
        // event just fired) so the recorded sample is algebraically
        // consistent.
        let inputs = NetworkInputs {
            demand_p: net.demand_p.clone(),
            demand_q: net.demand_q.clone(),
            devices: device_links(&net.model, &layout, &emf, &x),
        };
        let sol = solve_network(&net.ybus, &inputs, &warm, &opts.solve)
            .map_err(|source| SimError::Network { t, source })?;
        warm = sol.voltages;

        check_guard(&net.model, &layout, &x, &warm, opts, t)?;

        let f_pu = probe_frequency(&net.model, &opts.probe, &layout, &x)?;
        samples.push(f_pu * model.base.f_nom / omega0);
        states.push(layout.unpack(&x, &emf, warm.clone(), t));
    }

    Ok(SimResult {
        trajectory: FrequencyTrajectory::new(dt, samples, model.base.f_nom, window),
        states,
    })
}
