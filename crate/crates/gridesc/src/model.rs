//! Static network description: buses, branches, device parameter sets and the
//! nodal admittance matrix.
//!
//! All electrical quantities are in per-unit on a single system MVA base.
//! Frequencies are stored in per-unit of the nominal frequency; `base.f_nom`
//! (Hz) is only used when converting to engineering units.
//!
//! Transmission lines are lossless: a branch carries a series susceptance
//! `B_jk` and its admittance is `i * B_jk`. Shunt loads at a bus contribute
//! `G_j + i * B_j` to the Ybus diagonal; constant-power demands live on the
//! bus as `load_p` / `load_q` and enter the network solve as injections.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

pub type C64 = Complex<f64>;

/// What a bus hosts. Device lists are validated against this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    Generator,
    Inverter,
    LoadOnly,
}

/// A network bus. Ids are 1-based, unique and contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub bus_kind: BusKind,
    /// Shunt load conductance G_j (pu). Consumes `V^2 * G` of active power.
    #[serde(default)]
    pub shunt_conductance: f64,
    /// Shunt load susceptance B_j (pu).
    #[serde(default)]
    pub shunt_susceptance: f64,
    /// Constant-power active demand at this bus (pu).
    #[serde(default)]
    pub load_p: f64,
    /// Constant-power reactive demand at this bus (pu).
    #[serde(default)]
    pub load_q: f64,
}

fn default_true() -> bool {
    true
}

/// A lossless tie-line between two buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series susceptance B_jk (pu). The branch admittance is `i * B_jk`;
    /// an inductive line of reactance X has `B_jk = -1/X`.
    pub series_susceptance: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

impl Branch {
    /// Unordered endpoint pair, normalized so (a, b) == (b, a).
    pub fn key(&self) -> (usize, usize) {
        if self.from_bus <= self.to_bus {
            (self.from_bus, self.to_bus)
        } else {
            (self.to_bus, self.from_bus)
        }
    }

    pub fn connects(&self, a: usize, b: usize) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }

    pub fn admittance(&self) -> C64 {
        C64::new(0.0, self.series_susceptance)
    }
}

fn default_v_set() -> f64 {
    1.0
}

fn default_sg_reactance() -> f64 {
    0.2
}

/// Classical-model synchronous generator: constant EMF behind a transient
/// reactance, swing dynamics scaled by inertia and damping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgParams {
    pub bus: usize,
    /// Inertia M_i (pu·s).
    pub inertia: f64,
    /// Damping D_i (pu).
    pub damping: f64,
    /// Mechanical input power P_i (pu).
    pub mech_power: f64,
    /// Terminal voltage target used when the EMF magnitude is initialized.
    #[serde(default = "default_v_set")]
    pub v_set: f64,
    /// Transient reactance between the internal EMF and the terminal bus (pu).
    #[serde(default = "default_sg_reactance")]
    pub transient_reactance: f64,
}

fn default_gfm_reactance() -> f64 {
    0.05
}

/// Droop-controlled grid-forming inverter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfmParams {
    pub bus: usize,
    /// Active power–frequency droop coefficient m_p (pu frequency per pu power).
    pub p_droop: f64,
    /// Reactive power–voltage droop coefficient m_q (pu).
    pub q_droop: f64,
    /// Active power setpoint P_set (pu).
    pub p_set: f64,
    /// Reactive power setpoint Q_set (pu).
    pub q_set: f64,
    /// Voltage setpoint V_set (pu).
    pub v_set: f64,
    /// Measurement filter time constant τ (s).
    pub filter_tau: f64,
    /// Proportional gain of the voltage controller.
    pub kpv: f64,
    /// Integral gain of the voltage controller (1/s).
    pub kiv: f64,
    /// Series reactance coupling the internal voltage to the terminal bus (pu).
    #[serde(default = "default_gfm_reactance")]
    pub coupling_reactance: f64,
}

fn default_f_nom() -> f64 {
    60.0
}

fn default_omega0() -> f64 {
    1.0
}

/// Per-unit bases shared by the whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseValues {
    /// Nominal frequency in Hz, used only for unit conversion.
    #[serde(default = "default_f_nom")]
    pub f_nom: f64,
    /// Nominal frequency in per-unit (1.0 by convention).
    #[serde(default = "default_omega0")]
    pub omega0: f64,
}

impl Default for BaseValues {
    fn default() -> Self {
        Self { f_nom: default_f_nom(), omega0: default_omega0() }
    }
}

/// The full static system description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    #[serde(default)]
    pub base: BaseValues,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub sgs: Vec<SgParams>,
    #[serde(default)]
    pub gfms: Vec<GfmParams>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bus ids must be unique and contiguous from 1 to N, got {0:?}")]
    BadBusIds(Vec<usize>),
    #[error("bus {bus}: {what} must be finite, got {value}")]
    NonFinite { bus: usize, what: &'static str, value: f64 },
    #[error("branch {from}-{to}: {reason}")]
    BadBranch { from: usize, to: usize, reason: String },
    #[error("parallel branches between buses {0} and {1} are not allowed")]
    ParallelBranch(usize, usize),
    #[error("no in-service branch between buses {0} and {1}")]
    BranchNotFound(usize, usize),
    #[error("device on bus {bus}: {reason}")]
    BadDevice { bus: usize, reason: String },
    #[error("bus {0} hosts more than one device of the same kind")]
    DuplicateDevice(usize),
    #[error("invalid base values: {0}")]
    BadBase(String),
}

impl NetworkModel {
    /// Parse a model from TOML text and validate it.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let model: NetworkModel = toml::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    /// Load and validate a model file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// 0-based index of a 1-based bus id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        if id >= 1 && id <= self.buses.len() {
            Some(id - 1)
        } else {
            None
        }
    }

    /// Angle rate base in rad/s: per-unit frequency deviations advance angles
    /// as `dδ/dt = (ω - ω0) * 2π f_nom`.
    pub fn omega_base_rad(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.base.f_nom
    }

    /// Total constant-power demand (P, Q) over all buses.
    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.load_p, q + b.load_q))
    }

    /// The bus id carrying the largest constant-power demand (lowest id wins ties).
    pub fn largest_load_bus(&self) -> Option<usize> {
        self.buses
            .iter()
            .filter(|b| b.load_p > 0.0)
            .max_by(|a, b| {
                a.load_p
                    .partial_cmp(&b.load_p)
                    .unwrap()
                    .then(b.id.cmp(&a.id))
            })
            .map(|b| b.id)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.buses.is_empty() {
            return Err(ModelError::BadBusIds(vec![]));
        }
        if !(self.base.f_nom.is_finite() && self.base.f_nom > 0.0) {
            return Err(ModelError::BadBase(format!("f_nom = {}", self.base.f_nom)));
        }
        if !(self.base.omega0.is_finite() && self.base.omega0 > 0.0) {
            return Err(ModelError::BadBase(format!("omega0 = {}", self.base.omega0)));
        }

        let mut ids: Vec<usize> = self.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id != i + 1) {
            return Err(ModelError::BadBusIds(ids));
        }
        for bus in &self.buses {
            for (what, value) in [
                ("shunt_conductance", bus.shunt_conductance),
                ("shunt_susceptance", bus.shunt_susceptance),
                ("load_p", bus.load_p),
                ("load_q", bus.load_q),
            ] {
                if !value.is_finite() {
                    return Err(ModelError::NonFinite { bus: bus.id, what, value });
                }
            }
        }

        let n = self.buses.len();
        let mut seen_pairs = std::collections::HashSet::new();
        for br in &self.branches {
            if br.from_bus == br.to_bus {
                return Err(ModelError::BadBranch {
                    from: br.from_bus,
                    to: br.to_bus,
                    reason: "endpoints must differ".into(),
                });
            }
            if br.from_bus < 1 || br.from_bus > n || br.to_bus < 1 || br.to_bus > n {
                return Err(ModelError::BadBranch {
                    from: br.from_bus,
                    to: br.to_bus,
                    reason: "endpoint bus does not exist".into(),
                });
            }
            if br.in_service && (br.series_susceptance == 0.0 || !br.series_susceptance.is_finite())
            {
                return Err(ModelError::BadBranch {
                    from: br.from_bus,
                    to: br.to_bus,
                    reason: format!(
                        "in-service branch needs a nonzero finite susceptance, got {}",
                        br.series_susceptance
                    ),
                });
            }
            if !seen_pairs.insert(br.key()) {
                let (a, b) = br.key();
                return Err(ModelError::ParallelBranch(a, b));
            }
        }

        let mut sg_buses = std::collections::HashSet::new();
        for sg in &self.sgs {
            let idx = self
                .bus_index(sg.bus)
                .ok_or(ModelError::BadDevice { bus: sg.bus, reason: "bus does not exist".into() })?;
            if self.buses[idx].bus_kind != BusKind::Generator {
                return Err(ModelError::BadDevice {
                    bus: sg.bus,
                    reason: "synchronous generator requires bus_kind = \"generator\"".into(),
                });
            }
            if !sg_buses.insert(sg.bus) {
                return Err(ModelError::DuplicateDevice(sg.bus));
            }
            if !(sg.inertia > 0.0 && sg.inertia.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: sg.bus,
                    reason: format!("inertia must be > 0, got {}", sg.inertia),
                });
            }
            if !(sg.damping >= 0.0 && sg.damping.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: sg.bus,
                    reason: format!("damping must be >= 0, got {}", sg.damping),
                });
            }
            if !(sg.transient_reactance > 0.0 && sg.transient_reactance.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: sg.bus,
                    reason: format!(
                        "transient_reactance must be > 0, got {}",
                        sg.transient_reactance
                    ),
                });
            }
            if !(sg.v_set > 0.0 && sg.mech_power.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: sg.bus,
                    reason: "v_set must be > 0 and mech_power finite".into(),
                });
            }
        }

        let mut gfm_buses = std::collections::HashSet::new();
        for gfm in &self.gfms {
            let idx = self
                .bus_index(gfm.bus)
                .ok_or(ModelError::BadDevice { bus: gfm.bus, reason: "bus does not exist".into() })?;
            if self.buses[idx].bus_kind != BusKind::Inverter {
                return Err(ModelError::BadDevice {
                    bus: gfm.bus,
                    reason: "grid-forming inverter requires bus_kind = \"inverter\"".into(),
                });
            }
            if !gfm_buses.insert(gfm.bus) {
                return Err(ModelError::DuplicateDevice(gfm.bus));
            }
            if !(gfm.filter_tau > 0.0 && gfm.filter_tau.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: gfm.bus,
                    reason: format!("filter_tau must be > 0, got {}", gfm.filter_tau),
                });
            }
            if !(gfm.p_droop > 0.0 && gfm.p_droop.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: gfm.bus,
                    reason: format!("p_droop must be > 0, got {}", gfm.p_droop),
                });
            }
            if !(gfm.q_droop >= 0.0 && gfm.q_droop.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: gfm.bus,
                    reason: format!("q_droop must be >= 0, got {}", gfm.q_droop),
                });
            }
            if !(gfm.coupling_reactance > 0.0 && gfm.coupling_reactance.is_finite()) {
                return Err(ModelError::BadDevice {
                    bus: gfm.bus,
                    reason: format!(
                        "coupling_reactance must be > 0, got {}",
                        gfm.coupling_reactance
                    ),
                });
            }
            for (what, value) in [
                ("p_set", gfm.p_set),
                ("q_set", gfm.q_set),
                ("v_set", gfm.v_set),
                ("kpv", gfm.kpv),
                ("kiv", gfm.kiv),
            ] {
                if !value.is_finite() {
                    return Err(ModelError::BadDevice {
                        bus: gfm.bus,
                        reason: format!("{what} must be finite, got {value}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Build the complex nodal admittance matrix from in-service branches and
    /// bus shunts.
    pub fn build_ybus(&self) -> Result<Ybus, ModelError> {
        let n = self.n_buses();
        let mut seen = std::collections::HashSet::new();
        for br in self.branches.iter().filter(|b| b.in_service) {
            if !seen.insert(br.key()) {
                let (a, b) = br.key();
                return Err(ModelError::ParallelBranch(a, b));
            }
        }
        let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for bus in &self.buses {
            let j = bus.id - 1;
            y[(j, j)] += C64::new(bus.shunt_conductance, bus.shunt_susceptance);
        }
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (j, k) = (br.from_bus - 1, br.to_bus - 1);
            let yb = br.admittance();
            y[(j, j)] += yb;
            y[(k, k)] += yb;
            y[(j, k)] -= yb;
            y[(k, j)] -= yb;
        }
        Ok(Ybus { matrix: y })
    }

    /// Value-semantics branch removal: returns a copy of the model with the
    /// in-service branch between `from` and `to` switched out.
    pub fn remove_branch(&self, from: usize, to: usize) -> Result<NetworkModel, ModelError> {
        let mut out = self.clone();
        let branch = out
            .branches
            .iter_mut()
            .find(|b| b.in_service && b.connects(from, to))
            .ok_or(ModelError::BranchNotFound(from, to))?;
        branch.in_service = false;
        Ok(out)
    }

    /// Counterpart of [`NetworkModel::remove_branch`].
    pub fn restore_branch(&self, from: usize, to: usize) -> Result<NetworkModel, ModelError> {
        let mut out = self.clone();
        let branch = out
            .branches
            .iter_mut()
            .find(|b| !b.in_service && b.connects(from, to))
            .ok_or(ModelError::BranchNotFound(from, to))?;
        branch.in_service = true;
        Ok(out)
    }
}

/// Dense complex nodal admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ybus {
    matrix: DMatrix<C64>,
}

impl Ybus {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, j: usize, k: usize) -> C64 {
        self.matrix[(j, k)]
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Largest absolute asymmetry |Y[j][k] - Y[k][j]|; exactly 0.0 for any
    /// matrix built by [`NetworkModel::build_ybus`].
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in (j + 1)..n {
                worst = worst.max((self.matrix[(j, k)] - self.matrix[(k, j)]).norm());
            }
        }
        worst
    }
}
