//! Storage capacitor and the hysteretic, intermittently powered load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy stored in a capacitor.
pub fn cap_energy(c_farad: f64, v: f64) -> f64 {
    0.5 * c_farad * v * v
}

/// Energy the load consumes per on-phase, as the capacitor falls from
/// `v_on` to `v_off`.
pub fn load_energy_per_cycle(c_farad: f64, v_on_v: f64, v_off_v: f64) -> Result<f64> {
    if v_off_v > v_on_v {
        return Err(Error::Argument(format!(
            "turn-off threshold {v_off_v} V above turn-on threshold {v_on_v} V"
        )));
    }
    Ok(cap_energy(c_farad, v_on_v) - cap_energy(c_farad, v_off_v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapLoadState {
    pub c_farad: f64,
    pub v_cap_v: f64,
    pub load_on: bool,
    pub v_on_v: f64,
    pub v_off_v: f64,
    /// Load draw while on.
    pub p_load_w: f64,
    #[serde(skip)]
    pub activations: u64,
    #[serde(skip)]
    pub e_delivered_j: f64,
}

impl Default for CapLoadState {
    fn default() -> Self {
        Self {
            c_farad: 220e-6,
            v_cap_v: 2.18,
            load_on: false,
            v_on_v: 3.38,
            v_off_v: 2.18,
            p_load_w: 15e-3,
            activations: 0,
            e_delivered_j: 0.0,
        }
    }
}

/// Energy that actually left the capacitor during one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CapFlows {
    pub load_j: f64,
    pub drain_j: f64,
    /// Requested drain that could not be supplied (capacitor empty).
    pub unmet_j: f64,
    pub turned_on: bool,
    pub turned_off: bool,
}

impl CapLoadState {
    pub fn with_voltage(mut self, v: f64) -> Self {
        self.v_cap_v = v;
        self
    }

    pub fn energy(&self) -> f64 {
        cap_energy(self.c_farad, self.v_cap_v)
    }

    pub fn energy_per_cycle(&self) -> f64 {
        cap_energy(self.c_farad, self.v_on_v) - cap_energy(self.c_farad, self.v_off_v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_farad > 0.0 && self.c_farad.is_finite()) {
            return Err(Error::config("storage.c_farad", "must be > 0"));
        }
        if !(self.v_cap_v >= 0.0 && self.v_cap_v.is_finite()) {
            return Err(Error::config("storage.v_cap_v", "must be >= 0"));
        }
        if !(self.v_off_v > 0.0) {
            return Err(Error::config("storage.v_off_v", "must be > 0"));
        }
        if !(self.v_on_v > self.v_off_v && self.v_on_v.is_finite()) {
            return Err(Error::config("storage.v_on_v", "must exceed storage.v_off_v"));
        }
        if !(self.p_load_w >= 0.0 && self.p_load_w.is_finite()) {
            return Err(Error::config("storage.p_load_w", "must be >= 0"));
        }
        Ok(())
    }
}

/// Advances the capacitor by one step: adds `e_in_j`, removes the load draw
/// (if on) and `e_drain_j` (standby draw), then applies the load thresholds
/// to the new voltage. When the capacitor cannot cover both draws, the load
/// is served first and the shortfall is reported as unmet drain.
pub fn step_cap_load(
    state: &CapLoadState,
    e_in_j: f64,
    e_drain_j: f64,
    dt: f64,
) -> (CapLoadState, CapFlows) {
    let mut next = *state;
    let available = (state.energy() + e_in_j).max(0.0);
    let load_want = if state.load_on {
        state.p_load_w * dt
    } else {
        0.0
    };
    let load_j = load_want.min(available);
    let drain_j = e_drain_j.min(available - load_j);
    let e = available - load_j - drain_j;
    next.v_cap_v = (2.0 * e / state.c_farad).sqrt();
    next.e_delivered_j += load_j;

    let mut flows = CapFlows {
        load_j,
        drain_j,
        unmet_j: e_drain_j - drain_j,
        ..CapFlows::default()
    };
    if !next.load_on && next.v_cap_v >= next.v_on_v {
        next.load_on = true;
        next.activations += 1;
        flows.turned_on = true;
    } else if next.load_on && next.v_cap_v <= next.v_off_v {
        next.load_on = false;
        flows.turned_off = true;
    }
    (next, flows)
}
