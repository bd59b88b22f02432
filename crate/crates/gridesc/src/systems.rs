//! Bundled test systems.

use crate::model::NetworkModel;

/// TOML source of the bundled 8-bus system (also shipped at
/// `systems/mesh8.toml` in the repository).
pub const MESH8_TOML: &str = include_str!("../../../systems/mesh8.toml");

/// The bundled 8-bus meshed system: two synchronous machines, four
/// grid-forming inverters, 3.6 pu of constant-power load, lossless lines and
/// no conductive shunts. Setpoints balance the load, so its equilibrium sits
/// at nominal frequency.
///
/// Its droop-sweep cost curve over `[0.003, 0.022]` is unimodal with an
/// interior minimum, and the minimum moves when either
/// [`MESH8_FEEDER_OUTAGE`] or [`MESH8_TIE_OUTAGE`] is switched out.
pub fn mesh8() -> NetworkModel {
    NetworkModel::from_toml_str(MESH8_TOML).expect("bundled system must be valid")
}

/// Inverter feeder (bus 4 to bus 1). Removing it reroutes that inverter over
/// the long chord and weakens the fleet coupling, shifting the optimal droop
/// upward.
pub const MESH8_FEEDER_OUTAGE: (usize, usize) = (4, 1);

/// Cross tie between machine 2 and load bus 7. Removing it redistributes the
/// machine loading and nudges the optimal droop.
pub const MESH8_TIE_OUTAGE: (usize, usize) = (2, 7);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_system_is_valid_and_balanced() {
        let model = mesh8();
        assert_eq!(model.n_buses(), 8);
        assert_eq!(model.sgs.len(), 2);
        assert_eq!(model.gfms.len(), 4);
        let (p, _) = model.total_load();
        let gen: f64 = model.sgs.iter().map(|s| s.mech_power).sum::<f64>()
            + model.gfms.iter().map(|g| g.p_set).sum::<f64>();
        assert!((gen - p).abs() < 1e-12, "generation {gen} vs load {p}");
        // No conductive shunts: the droop-sharing law is exact.
        assert!(model.buses.iter().all(|b| b.shunt_conductance == 0.0));
    }
}
