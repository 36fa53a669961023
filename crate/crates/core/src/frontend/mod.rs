//! Harvesting frontends between the transducer and the storage capacitor.
//!
//! * Converter-less: the bridge rectifier feeds the capacitor directly, so
//!   the electrodes conduct at `v_cap + 2 vd`.
//! * Converter-based: the bridge feeds a converter input regulated at a
//!   threshold voltage, so the electrodes conduct at `v_th + 2 vd` whatever
//!   the capacitor voltage is.

pub mod converter;
pub mod rectifier;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::Forcing;
use crate::transducer::{PiezoModel, PiezoState, PortFlows, Terminal};

pub use converter::{ConverterParams, EfficiencyPoint, EfficiencyTable, QuiescentScaling};
pub use rectifier::{rectifier_conduction, Bridge, BridgeStep, Conduction, RectifierParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopologyKind {
    ConverterLess,
    ConverterBased,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::ConverterLess => "ConverterLess",
            TopologyKind::ConverterBased => "ConverterBased",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ConverterLess" => Ok(TopologyKind::ConverterLess),
            "ConverterBased" => Ok(TopologyKind::ConverterBased),
            other => Err(Error::config(
                "topology.kind",
                format!("unknown topology `{other}` (ConverterLess | ConverterBased)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    ConverterLess {
        rectifier: RectifierParams,
    },
    ConverterBased {
        rectifier: RectifierParams,
        converter: ConverterParams,
    },
}

impl Default for Topology {
    fn default() -> Self {
        Topology::ConverterBased {
            rectifier: RectifierParams::default(),
            converter: ConverterParams::default(),
        }
    }
}

/// Non-fatal configuration findings.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    ThresholdBelowDiodeDrops { v_threshold_v: f64, two_vd_v: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ThresholdBelowDiodeDrops {
                v_threshold_v,
                two_vd_v,
            } => write!(
                f,
                "converter threshold {v_threshold_v} V is not above the bridge drop {two_vd_v} V"
            ),
        }
    }
}

impl Topology {
    pub fn converter_less() -> Self {
        Topology::ConverterLess {
            rectifier: RectifierParams::default(),
        }
    }

    pub fn converter_based(v_threshold_v: f64) -> Self {
        Topology::ConverterBased {
            rectifier: RectifierParams::default(),
            converter: ConverterParams {
                v_threshold_v,
                ..ConverterParams::default()
            },
        }
    }

    pub fn kind(&self) -> TopologyKind {
        match self {
            Topology::ConverterLess { .. } => TopologyKind::ConverterLess,
            Topology::ConverterBased { .. } => TopologyKind::ConverterBased,
        }
    }

    pub fn rectifier(&self) -> &RectifierParams {
        match self {
            Topology::ConverterLess { rectifier } | Topology::ConverterBased { rectifier, .. } => {
                rectifier
            }
        }
    }

    pub fn converter(&self) -> Option<&ConverterParams> {
        match self {
            Topology::ConverterLess { .. } => None,
            Topology::ConverterBased { converter, .. } => Some(converter),
        }
    }

    pub fn converter_mut(&mut self) -> Option<&mut ConverterParams> {
        match self {
            Topology::ConverterLess { .. } => None,
            Topology::ConverterBased { converter, .. } => Some(converter),
        }
    }

    pub fn validate(&self) -> Result<Vec<Warning>> {
        self.rectifier().validate()?;
        let mut warnings = Vec::new();
        if let Some(c) = self.converter() {
            c.validate()?;
            let two_vd = 2.0 * self.rectifier().vd_v;
            if c.v_threshold_v <= two_vd {
                warnings.push(Warning::ThresholdBelowDiodeDrops {
                    v_threshold_v: c.v_threshold_v,
                    two_vd_v: two_vd,
                });
            }
        }
        Ok(warnings)
    }
}

/// Mutable frontend state carried between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendState {
    pub bridge: Bridge,
    /// Current converter input threshold.
    pub threshold_v: f64,
    /// Low-pass filtered converter input current.
    pub i_avg_a: f64,
    /// Harvester disconnected for an open-circuit sample.
    pub disconnected: bool,
}

impl FrontendState {
    pub fn new(topology: &Topology) -> Self {
        Self {
            bridge: Bridge::default(),
            threshold_v: topology.converter().map_or(0.0, |c| c.v_threshold_v),
            i_avg_a: 0.0,
            disconnected: false,
        }
    }
}

/// Energy flows of one frontend step. All energies in joules.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepEnergy {
    pub state: PiezoState,
    pub flows: PortFlows,
    pub pin_energy: f64,
    pub switching_loss: f64,
    /// Charge through the bridge into the DC side.
    pub charge_dc: f64,
    pub rectifier_loss: f64,
    pub converter_loss: f64,
    /// Energy delivered into the capacitor.
    pub cap_in: f64,
    /// Standby energy drawn from the capacitor.
    pub quiescent: f64,
}

impl StepEnergy {
    /// Electrical energy that left the transducer this step.
    pub fn electrical_out(&self) -> f64 {
        self.flows.e_out + self.pin_energy
    }

    /// `electrical_out - (cap_in + losses)`; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.electrical_out()
            - (self.cap_in + self.rectifier_loss + self.converter_loss + self.switching_loss)
    }
}

fn from_bridge(b: BridgeStep) -> StepEnergy {
    StepEnergy {
        state: b.state,
        flows: b.flows,
        pin_energy: b.pin_energy,
        switching_loss: b.switching_loss,
        charge_dc: b.charge_dc,
        ..StepEnergy::default()
    }
}

/// One step of the converter-less frontend: the bridge conducts into the
/// capacitor at `v_cap`.
#[allow(clippy::too_many_arguments)]
pub fn converterless_step<F: Forcing + ?Sized>(
    model: &PiezoModel,
    state: &PiezoState,
    fe: &mut FrontendState,
    rectifier: &RectifierParams,
    v_cap: f64,
    t: f64,
    dt: f64,
    force: &F,
) -> StepEnergy {
    let clamp = rectifier.clamp(v_cap.max(0.0));
    let b = fe
        .bridge
        .advance(&model.dynamics(), state, t, dt, clamp, force);
    let mut e = from_bridge(b);
    e.cap_in = v_cap.max(0.0) * e.charge_dc;
    e.rectifier_loss = 2.0 * rectifier.vd_v * e.charge_dc;
    e
}

/// One step of the converter-based frontend. The bridge conducts into the
/// converter input regulated at `fe.threshold_v`; the capacitor voltage
/// only sets the standby draw.
#[allow(clippy::too_many_arguments)]
pub fn converter_step<F: Forcing + ?Sized>(
    model: &PiezoModel,
    state: &PiezoState,
    fe: &mut FrontendState,
    rectifier: &RectifierParams,
    converter: &ConverterParams,
    v_cap: f64,
    t: f64,
    dt: f64,
    force: &F,
) -> StepEnergy {
    let dyn_ = model.dynamics();
    let mut e = if fe.disconnected {
        fe.bridge = Bridge::default();
        let (state, flows) = dyn_.integrate(state, t, dt, Terminal::Current(0.0), force);
        StepEnergy {
            state,
            flows,
            ..StepEnergy::default()
        }
    } else {
        let clamp = rectifier.clamp(fe.threshold_v);
        from_bridge(fe.bridge.advance(&dyn_, state, t, dt, clamp, force))
    };
    let alpha = -(-dt / converter.input_averaging_s).exp_m1();
    fe.i_avg_a += alpha * (e.charge_dc / dt - fe.i_avg_a);
    let eta = converter.efficiency.eta(fe.threshold_v, fe.i_avg_a);
    let p_in = fe.threshold_v * e.charge_dc;
    e.rectifier_loss = 2.0 * rectifier.vd_v * e.charge_dc;
    e.cap_in = eta * p_in;
    e.converter_loss = p_in - e.cap_in;
    e.quiescent = converter.quiescent_power(v_cap) * dt;
    e
}

/// Dispatches to the step of the given topology.
#[allow(clippy::too_many_arguments)]
pub fn frontend_step<F: Forcing + ?Sized>(
    model: &PiezoModel,
    topology: &Topology,
    state: &PiezoState,
    fe: &mut FrontendState,
    v_cap: f64,
    t: f64,
    dt: f64,
    force: &F,
) -> StepEnergy {
    match topology {
        Topology::ConverterLess { rectifier } => {
            converterless_step(model, state, fe, rectifier, v_cap, t, dt, force)
        }
        Topology::ConverterBased {
            rectifier,
            converter,
        } => converter_step(model, state, fe, rectifier, converter, v_cap, t, dt, force),
    }
}
