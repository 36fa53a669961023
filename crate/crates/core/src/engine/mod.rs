//! Fixed-step simulation of the full chain: excitation, transducer and
//! frontend, storage capacitor and load, plus the energy ledger.

mod grid;

pub use grid::{
    compare_report, run_grid, CellRatio, ComparisonReport, FrequencyMean, GridSpec, Ratio,
    SweepRow, SweepTable,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::excitation::VibrationProfile;
use crate::frontend::{frontend_step, FrontendState, Topology, Warning};
use crate::mppt::{FractionalOcvTracker, OcvSample};
use crate::storage::{step_cap_load, CapLoadState};
use crate::transducer::{PiezoModel, PiezoState};

/// How the converter threshold is chosen during a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdControl {
    /// Keep `v_threshold_v` from the converter parameters.
    #[default]
    Fixed,
    /// Periodically disconnect, sample the open-circuit voltage and set the
    /// threshold to `k_fraction` of it.
    FractionalOcv { k_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub profile: VibrationProfile,
    pub model: PiezoModel,
    pub topology: Topology,
    /// Initial capacitor and load state.
    pub cap_load: CapLoadState,
    pub dt_s: f64,
    /// Warm-up excluded from averages; `None` selects [`default_transient_skip`].
    pub transient_skip_s: Option<f64>,
    /// Reserved for randomized components; nothing consumes it yet.
    pub seed: u64,
    pub control: ThresholdControl,
    /// Trace sampling rate; 0 disables the time series.
    pub trace_rate_hz: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            profile: VibrationProfile::default(),
            model: PiezoModel::default(),
            topology: Topology::default(),
            cap_load: CapLoadState::default(),
            dt_s: 1e-5,
            transient_skip_s: None,
            seed: 0,
            control: ThresholdControl::Fixed,
            trace_rate_hz: 100.0,
        }
    }
}

/// `max(2 s, 20 Q / f0)`, halved duration if that would not leave a window.
pub fn default_transient_skip(model: &PiezoModel, duration_s: f64) -> f64 {
    let skip = f64::max(2.0, 20.0 * model.q_factor / model.f0_hz);
    if skip >= duration_s {
        0.5 * duration_s
    } else {
        skip
    }
}

impl SimConfig {
    pub fn transient_skip(&self) -> f64 {
        self.transient_skip_s
            .unwrap_or_else(|| default_transient_skip(&self.model, self.profile.duration_s))
    }

    /// Validates every part of the configuration, returning non-fatal
    /// warnings.
    pub fn validate(&self) -> Result<Vec<Warning>> {
        self.profile.validate()?;
        self.model.validate()?;
        self.model.check_step(self.dt_s)?;
        self.cap_load.validate()?;
        let warnings = self.topology.validate()?;
        let skip = self.transient_skip();
        if !(skip >= 0.0 && skip < self.profile.duration_s) {
            return Err(Error::config(
                "sim.transient_skip_s",
                format!("{skip} s must lie in [0, duration {})", self.profile.duration_s),
            ));
        }
        if !(self.trace_rate_hz >= 0.0 && self.trace_rate_hz.is_finite()) {
            return Err(Error::config("sim.trace_rate_hz", "must be >= 0"));
        }
        if let ThresholdControl::FractionalOcv { k_fraction } = self.control {
            if self.topology.converter().is_none() {
                return Err(Error::config(
                    "mppt.policy",
                    "fractional open-circuit tracking needs the ConverterBased topology",
                ));
            }
            if !(k_fraction > 0.0 && k_fraction < 1.0) {
                return Err(Error::config("mppt.k_fraction", "must lie in (0, 1)"));
            }
        }
        Ok(warnings)
    }
}

/// Energy accounting over a run or window. Energies in joules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub duration_s: f64,
    pub work_in_j: f64,
    pub damping_j: f64,
    pub leakage_j: f64,
    /// Integrated `∫ vp i_out dt`.
    pub electrode_out_j: f64,
    /// Electrode energy released by re-pinning to a moved clamp.
    pub pin_j: f64,
    pub switching_loss_j: f64,
    pub rectifier_loss_j: f64,
    pub converter_loss_j: f64,
    pub cap_in_j: f64,
    pub quiescent_j: f64,
    pub load_j: f64,
    pub charge_dc_c: f64,
    /// `Σ V_dc q`: power handed to the DC node (capacitor or converter input).
    pub dc_energy_j: f64,
    pub piezo_stored_start_j: f64,
    pub piezo_stored_end_j: f64,
    pub cap_start_j: f64,
    pub cap_end_j: f64,
    /// Harvester time spent disconnected for open-circuit samples.
    pub disconnected_s: f64,
}

impl Ledger {
    /// Electrical energy that left the transducer.
    pub fn electrical_out(&self) -> f64 {
        self.electrode_out_j + self.pin_j
    }

    pub fn losses(&self) -> f64 {
        self.switching_loss_j + self.rectifier_loss_j + self.converter_loss_j + self.quiescent_j
    }

    pub fn transducer_residual(&self) -> f64 {
        self.work_in_j
            - (self.piezo_stored_end_j - self.piezo_stored_start_j
                + self.damping_j
                + self.leakage_j
                + self.electrical_out())
    }

    pub fn frontend_residual(&self) -> f64 {
        self.electrical_out()
            - (self.cap_in_j + self.switching_loss_j + self.rectifier_loss_j + self.converter_loss_j)
    }

    pub fn storage_residual(&self) -> f64 {
        self.cap_in_j - (self.cap_end_j - self.cap_start_j + self.load_j + self.quiescent_j)
    }

    /// Electrical output against capacitor gain, load energy and all losses.
    pub fn closure_residual(&self) -> f64 {
        self.electrical_out()
            - (self.cap_end_j - self.cap_start_j + self.load_j + self.losses())
    }

    /// Largest relative residual of the three balances and the overall
    /// closure, each against the gross flow through that stage.
    pub fn max_relative_residual(&self) -> f64 {
        let rel = |r: f64, gross: f64| {
            if gross > 0.0 {
                r.abs() / gross
            } else {
                r.abs()
            }
        };
        let mech_gross = self.work_in_j.abs().max(self.damping_j);
        let elec_gross = self.electrical_out().abs();
        let store_gross = self
            .cap_in_j
            .abs()
            .max(self.load_j + self.quiescent_j)
            .max(self.cap_start_j.max(self.cap_end_j) * 1e-9);
        [
            rel(self.transducer_residual(), mech_gross),
            rel(self.frontend_residual(), elec_gross),
            rel(self.storage_residual(), store_gross),
            rel(self.closure_residual(), elec_gross.max(store_gross)),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSummary {
    /// Average energy rate into the capacitor over the averaging window.
    pub avg_harvested_power_w: f64,
    /// Average power handed to the DC node behind the bridge.
    pub avg_dc_power_w: f64,
    /// Average electrical power leaving the transducer.
    pub avg_electrical_power_w: f64,
    pub activations: u64,
    pub e_delivered_j: f64,
    pub window_start_s: f64,
    pub window_s: f64,
    pub final_v_cap_v: f64,
    pub final_threshold_v: f64,
    /// Harvest forgone while disconnected, estimated at the window's
    /// average DC-side power.
    pub disconnect_loss_j: f64,
}

/// One load threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadEvent {
    pub time_s: f64,
    pub turned_on: bool,
    pub v_cap_v: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub time_s: Vec<f64>,
    pub vp_v: Vec<f64>,
    /// Rectified current averaged over the sample interval.
    pub i_rect_a: Vec<f64>,
    pub v_cap_v: Vec<f64>,
    pub load_on: Vec<bool>,
    /// Capacitor input power averaged over the sample interval.
    pub p_harvest_w: Vec<f64>,
    pub threshold_v: Vec<f64>,
    pub events: Vec<LoadEvent>,
    pub ocv_samples: Vec<OcvSample>,
    pub warnings: Vec<String>,
    /// Whole run.
    pub ledger: Ledger,
    /// Averaging window only.
    pub window: Ledger,
    pub summary: Option<SimSummary>,
}

impl SimTrace {
    pub fn summary(&self) -> &SimSummary {
        self.summary.as_ref().expect("summary is set by run_sim")
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    /// Appends one sample; `acc` holds the charge and capacitor energy
    /// accumulated over the preceding `span` seconds.
    fn push_sample(
        &mut self,
        t: f64,
        ps: &PiezoState,
        cap: &CapLoadState,
        fe: &FrontendState,
        acc: (f64, f64),
        span: f64,
    ) {
        let rate = |x: f64| if span > 0.0 { x / span } else { 0.0 };
        self.time_s.push(t);
        self.vp_v.push(ps.vp_v);
        self.i_rect_a.push(rate(acc.0));
        self.v_cap_v.push(cap.v_cap_v);
        self.load_on.push(cap.load_on);
        self.p_harvest_w.push(rate(acc.1));
        self.threshold_v.push(fe.threshold_v);
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("time_s,vp_v,i_rect_a,v_cap_v,load_on,p_harvest_w,threshold_v\n");
        for k in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.time_s[k],
                self.vp_v[k],
                self.i_rect_a[k],
                self.v_cap_v[k],
                u8::from(self.load_on[k]),
                self.p_harvest_w[k],
                self.threshold_v[k]
            ));
        }
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = String::from("time_s,event,v_cap_v\n");
        for e in &self.events {
            let kind = if e.turned_on { "on" } else { "off" };
            s.push_str(&format!("{},{},{}\n", e.time_s, kind, e.v_cap_v));
        }
        s
    }
}

fn accumulate(l: &mut Ledger, e: &crate::frontend::StepEnergy, drain: f64, load: f64, v_dc: f64) {
    l.work_in_j += e.flows.work_in;
    l.damping_j += e.flows.damping;
    l.leakage_j += e.flows.leakage;
    l.electrode_out_j += e.flows.e_out;
    l.pin_j += e.pin_energy;
    l.switching_loss_j += e.switching_loss;
    l.rectifier_loss_j += e.rectifier_loss;
    l.converter_loss_j += e.converter_loss;
    l.cap_in_j += e.cap_in;
    l.quiescent_j += drain;
    l.load_j += load;
    l.charge_dc_c += e.charge_dc;
    l.dc_energy_j += v_dc * e.charge_dc;
}

/// Runs one simulation. Identical configurations give bitwise-identical
/// results.
pub fn run_sim(config: &SimConfig) -> Result<SimTrace> {
    let warnings = config.validate()?;
    let dt = config.dt_s;
    let model = &config.model;
    let profile = &config.profile;
    let topology = &config.topology;
    let n_steps = (profile.duration_s / dt).round() as u64;
    let skip_steps = (config.transient_skip() / dt).round() as u64;
    let decimate = if config.trace_rate_hz > 0.0 {
        ((1.0 / (config.trace_rate_hz * dt)).round() as u64).max(1)
    } else {
        0
    };

    let mut tracker = match (config.control, topology.converter()) {
        (ThresholdControl::FractionalOcv { k_fraction }, Some(conv)) => Some(
            FractionalOcvTracker::new(k_fraction, conv, topology.rectifier().vd_v, profile)?,
        ),
        _ => None,
    };

    let mut trace = SimTrace {
        warnings: warnings.iter().map(ToString::to_string).collect(),
        ..SimTrace::default()
    };
    let mut ps = PiezoState::default();
    let mut fe = FrontendState::new(topology);
    let mut cap = config.cap_load;
    let mut ledger = Ledger {
        piezo_stored_start_j: model.stored_energy(&ps),
        cap_start_j: cap.energy(),
        ..Ledger::default()
    };
    let mut window = Ledger::default();
    let mut since_sample = (0.0_f64, 0.0_f64);

    if decimate > 0 {
        trace.push_sample(0.0, &ps, &cap, &fe, since_sample, 0.0);
    }

    for n in 0..n_steps {
        let t = n as f64 * dt;
        if n == skip_steps {
            window.piezo_stored_start_j = model.stored_energy(&ps);
            window.cap_start_j = cap.energy();
        }
        if let Some(tr) = tracker.as_mut() {
            tr.before_step(t, &mut fe);
        }
        let v_dc = match topology {
            Topology::ConverterLess { .. } => cap.v_cap_v,
            Topology::ConverterBased { .. } => fe.threshold_v,
        };
        let disconnected = fe.disconnected;
        let e = frontend_step(model, topology, &ps, &mut fe, cap.v_cap_v, t, dt, profile);
        let (next_cap, cf) = step_cap_load(&cap, e.cap_in, e.quiescent, dt);
        ps = e.state;
        cap = next_cap;
        if !(ps.is_finite() && cap.v_cap_v.is_finite()) {
            return Err(Error::Divergence {
                step: n,
                t_s: t,
                x_m: ps.x_m,
                v_mps: ps.v_mps,
                vp_v: ps.vp_v,
                v_cap_v: cap.v_cap_v,
            });
        }
        if let Some(tr) = tracker.as_mut() {
            tr.observe(&ps);
        }
        accumulate(&mut ledger, &e, cf.drain_j, cf.load_j, v_dc);
        if disconnected {
            ledger.disconnected_s += dt;
        }
        if n >= skip_steps {
            accumulate(&mut window, &e, cf.drain_j, cf.load_j, v_dc);
            if disconnected {
                window.disconnected_s += dt;
            }
        }
        if cf.turned_on || cf.turned_off {
            trace.events.push(LoadEvent {
                time_s: t + dt,
                turned_on: cf.turned_on,
                v_cap_v: cap.v_cap_v,
            });
        }
        if decimate > 0 {
            since_sample.0 += e.charge_dc;
            since_sample.1 += e.cap_in;
            if (n + 1) % decimate == 0 {
                let span = decimate as f64 * dt;
                trace.push_sample((n + 1) as f64 * dt, &ps, &cap, &fe, since_sample, span);
                since_sample = (0.0, 0.0);
            }
        }
    }

    ledger.duration_s = n_steps as f64 * dt;
    ledger.piezo_stored_end_j = model.stored_energy(&ps);
    ledger.cap_end_j = cap.energy();
    window.duration_s = (n_steps - skip_steps.min(n_steps)) as f64 * dt;
    window.piezo_stored_end_j = ledger.piezo_stored_end_j;
    window.cap_end_j = ledger.cap_end_j;

    let span = window.duration_s;
    let connected = span - window.disconnected_s;
    let avg_dc = if span > 0.0 { window.dc_energy_j / span } else { 0.0 };
    let dc_while_connected = if connected > 0.0 {
        window.dc_energy_j / connected
    } else {
        0.0
    };
    trace.summary = Some(SimSummary {
        avg_harvested_power_w: if span > 0.0 { window.cap_in_j / span } else { 0.0 },
        avg_dc_power_w: avg_dc,
        avg_electrical_power_w: if span > 0.0 {
            window.electrical_out() / span
        } else {
            0.0
        },
        activations: cap.activations,
        e_delivered_j: cap.e_delivered_j,
        window_start_s: skip_steps as f64 * dt,
        window_s: span,
        final_v_cap_v: cap.v_cap_v,
        final_threshold_v: fe.threshold_v,
        disconnect_loss_j: dc_while_connected * ledger.disconnected_s,
    });
    trace.ledger = ledger;
    trace.window = window;
    if let Some(tr) = tracker {
        trace.ocv_samples = tr.into_samples();
    }
    Ok(trace)
}
