//! Synchronized steady-state solver.
//!
//! The steady state of the coupled system has every device at one common
//! frequency `ω_sys`, machine electrical powers matching their droop-shifted
//! mechanical powers, inverter injections on their droop characteristics,
//! and the voltage loop settled (`V_e = 0`). When the setpoints balance the
//! load exactly, `ω_sys = ω0` and the state is a true fixed point; otherwise
//! all angles advance at the common rate `(ω_sys - ω0)·ω_base` and every
//! electrical quantity is still constant.
//!
//! Machine EMF magnitudes are free unknowns pinned by the terminal-voltage
//! targets `v_set`, the standard way a classical machine model is
//! initialized. Inverter internal voltages settle wherever the Q-V droop
//! puts them.

use nalgebra::{DMatrix, DVector};

use crate::model::{C64, NetworkModel};
use crate::network::{residuals, DeviceLink, NetworkInputs};

use super::{GfmState, SgState, SimError, SystemState};

const TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 120;

struct EqLayout {
    n: usize,
    m: usize,
    g: usize,
}

impl EqLayout {
    fn len(&self) -> usize {
        2 * self.n + 2 * self.m + 2 * self.g + 1
    }

    fn va<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[0..self.n]
    }
    fn vm<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[self.n..2 * self.n]
    }
    fn delta<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[2 * self.n..2 * self.n + self.m + self.g]
    }
    fn emf<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[2 * self.n + self.m + self.g..2 * self.n + 2 * self.m + 2 * self.g]
    }
    fn omega(&self, z: &[f64]) -> f64 {
        z[self.len() - 1]
    }
}

fn devices_from(model: &NetworkModel, lay: &EqLayout, z: &[f64]) -> Vec<DeviceLink> {
    let delta = lay.delta(z);
    let emf = lay.emf(z);
    let mut devices = Vec::with_capacity(lay.m + lay.g);
    for (i, sg) in model.sgs.iter().enumerate() {
        devices.push(DeviceLink {
            bus: sg.bus - 1,
            emf: emf[i],
            angle: delta[i],
            reactance: sg.transient_reactance,
        });
    }
    for (j, gfm) in model.gfms.iter().enumerate() {
        devices.push(DeviceLink {
            bus: gfm.bus - 1,
            emf: emf[lay.m + j],
            angle: delta[lay.m + j],
            reactance: gfm.coupling_reactance,
        });
    }
    devices
}

fn residual_vector(model: &NetworkModel, lay: &EqLayout, ybus: &crate::model::Ybus, z: &[f64]) -> Vec<f64> {
    let va = lay.va(z);
    let vm = lay.vm(z);
    let omega = lay.omega(z);
    let omega0 = model.base.omega0;

    let voltages: Vec<C64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| C64::from_polar(m, a))
        .collect();
    let devices = devices_from(model, lay, z);
    let inputs = NetworkInputs {
        demand_p: model.buses.iter().map(|b| b.load_p).collect(),
        demand_q: model.buses.iter().map(|b| b.load_q).collect(),
        devices: devices.clone(),
    };

    let mut r = residuals(ybus, &inputs, &voltages);
    r.reserve(2 * lay.m + 2 * lay.g + 1);

    // Device active-power balance at the common frequency.
    for (i, sg) in model.sgs.iter().enumerate() {
        let (p, _) = devices[i].injection(vm[sg.bus - 1], va[sg.bus - 1]);
        r.push(p - sg.mech_power - sg.damping * (omega0 - omega));
    }
    for (j, gfm) in model.gfms.iter().enumerate() {
        let (p, _) = devices[lay.m + j].injection(vm[gfm.bus - 1], va[gfm.bus - 1]);
        r.push(p - gfm.p_set - (omega0 - omega) / gfm.p_droop);
    }
    // Voltage conditions: machine terminals at their targets, inverter
    // terminals on the Q-V droop characteristic with V_e = 0.
    for sg in &model.sgs {
        r.push(vm[sg.bus - 1] - sg.v_set);
    }
    for (j, gfm) in model.gfms.iter().enumerate() {
        let (_, q) = devices[lay.m + j].injection(vm[gfm.bus - 1], va[gfm.bus - 1]);
        r.push(vm[gfm.bus - 1] - gfm.v_set - gfm.q_droop * (gfm.q_set - q));
    }
    // Rotational reference: pin the first device angle.
    r.push(lay.delta(z)[0]);
    r
}

/// Find the synchronized steady state of the model.
///
/// Returns a state whose device frequencies all equal the solved common
/// frequency, with inverter voltage-loop states settled. Fails if the damped
/// Newton iteration does not reach the residual tolerance.
pub fn find_equilibrium(model: &NetworkModel) -> Result<SystemState, SimError> {
    let lay = EqLayout { n: model.n_buses(), m: model.sgs.len(), g: model.gfms.len() };
    if lay.m + lay.g == 0 {
        return Err(SimError::NoEquilibrium("model has no devices".into()));
    }
    let ybus = model.build_ybus()?;

    let mut z = vec![0.0; lay.len()];
    for j in 0..lay.n {
        z[lay.n + j] = 1.0;
    }
    for (i, sg) in model.sgs.iter().enumerate() {
        z[2 * lay.n + lay.m + lay.g + i] = sg.v_set;
    }
    for (j, gfm) in model.gfms.iter().enumerate() {
        z[2 * lay.n + lay.m + lay.g + lay.m + j] = gfm.v_set;
    }
    z[lay.len() - 1] = model.base.omega0;

    let dim = lay.len();
    let mut r = residual_vector(model, &lay, &ybus, &z);
    let mut rnorm = norm_inf(&r);
    for _iter in 0..MAX_ITERATIONS {
        if rnorm < TOLERANCE {
            return Ok(build_state(model, &lay, &z));
        }
        // Forward-difference Jacobian.
        let mut jac = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let h = 1e-7 * z[col].abs().max(1.0);
            let mut zp = z.clone();
            zp[col] += h;
            let rp = residual_vector(model, &lay, &ybus, &zp);
            for row in 0..dim {
                jac[(row, col)] = (rp[row] - r[row]) / h;
            }
        }
        let rhs = -DVector::from_vec(r.clone());
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(SimError::NoEquilibrium(format!(
                "singular Jacobian with residual {rnorm:.3e}"
            )));
        };

        // Backtracking line search on the residual norm.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let mut zt = z.clone();
            for i in 0..dim {
                zt[i] += lambda * step[i];
            }
            for j in 0..lay.n {
                if zt[lay.n + j] < 1e-6 {
                    zt[lay.n + j] = 1e-6;
                }
            }
            let rt = residual_vector(model, &lay, &ybus, &zt);
            let rtnorm = norm_inf(&rt);
            if rtnorm.is_finite() && (rtnorm < rnorm || rnorm < 1e-9) {
                z = zt;
                r = rt;
                rnorm = rtnorm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(SimError::NoEquilibrium(format!(
                "stalled with residual {rnorm:.3e}"
            )));
        }
    }
    if rnorm < TOLERANCE {
        return Ok(build_state(model, &lay, &z));
    }
    Err(SimError::NoEquilibrium(format!(
        "residual {rnorm:.3e} after {MAX_ITERATIONS} iterations"
    )))
}

fn norm_inf(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn build_state(model: &NetworkModel, lay: &EqLayout, z: &[f64]) -> SystemState {
    let va = lay.va(z);
    let vm = lay.vm(z);
    let delta = lay.delta(z);
    let emf = lay.emf(z);
    let omega = lay.omega(z);

    let sg_states = model
        .sgs
        .iter()
        .enumerate()
        .map(|(i, _)| SgState { rotor_angle: delta[i], frequency: omega, emf: emf[i] })
        .collect();
    let gfm_states = model
        .gfms
        .iter()
        .enumerate()
        .map(|(j, _)| GfmState {
            angle: delta[lay.m + j],
            frequency: omega,
            voltage_error: 0.0,
            internal_voltage: emf[lay.m + j],
        })
        .collect();
    let bus_voltages = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| C64::from_polar(m, a))
        .collect();
    SystemState { sg_states, gfm_states, bus_voltages, time: 0.0 }
}
