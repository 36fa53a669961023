//! Maximum-power-point estimation and tracking of the converter threshold.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_sim, SimConfig, ThresholdControl};
use crate::error::{Error, Result};
use crate::excitation::VibrationProfile;
use crate::frontend::{Bridge, ConverterParams, FrontendState, RectifierParams, Topology};
use crate::transducer::{cycle_steps, EnergyBalance, IvCurve, PiezoModel, PiezoState, PortFlows};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MppEstimate {
    pub v_mpp_v: f64,
    pub i_mpp_a: f64,
    pub p_mpp_w: f64,
    pub voc_v: f64,
}

/// Sample of `curve` with the largest `V·I`; ties go to the lower voltage.
pub fn find_mpp(curve: &IvCurve) -> MppEstimate {
    let mut best: Option<(f64, f64, f64)> = None;
    for s in &curve.samples {
        let p = s.voltage_v * s.current_a;
        if best.map_or(true, |(_, _, bp)| p > bp) {
            best = Some((s.voltage_v, s.current_a, p));
        }
    }
    match best {
        Some((v, i, p)) if p > 0.0 => MppEstimate {
            v_mpp_v: v,
            i_mpp_a: i,
            p_mpp_w: p,
            voc_v: curve.voc_v,
        },
        _ => {
            let short = curve
                .samples
                .first()
                .filter(|s| s.voltage_v == 0.0)
                .map_or(0.0, |s| s.current_a);
            MppEstimate {
                v_mpp_v: 0.0,
                i_mpp_a: short,
                p_mpp_w: 0.0,
                voc_v: curve.voc_v,
            }
        }
    }
}

/// 0.5 V to 2.9 V in 0.1 V steps.
pub fn default_sweep_grid() -> Vec<f64> {
    (5..=29).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerPolicy {
    StaticSweep { sweep_grid_v: Vec<f64> },
    FractionalOcv { k_fraction: f64, f_t_hz: f64 },
    OracleDynamic { f_t_hz: f64 },
}

impl Default for TrackerPolicy {
    fn default() -> Self {
        TrackerPolicy::StaticSweep {
            sweep_grid_v: default_sweep_grid(),
        }
    }
}

impl TrackerPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrackerPolicy::StaticSweep { sweep_grid_v } => check_grid(sweep_grid_v),
            TrackerPolicy::FractionalOcv { k_fraction, f_t_hz } => {
                if !(*k_fraction > 0.0 && *k_fraction < 1.0) {
                    return Err(Error::config("mppt.k_fraction", "must lie in (0, 1)"));
                }
                check_rate(*f_t_hz)
            }
            TrackerPolicy::OracleDynamic { f_t_hz } => check_rate(*f_t_hz),
        }
    }
}

fn check_rate(f_t_hz: f64) -> Result<()> {
    if !(f_t_hz > 0.0 && f_t_hz.is_finite()) {
        return Err(Error::config("mppt.f_t_hz", "must be > 0"));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("mppt.sweep_grid_v", "empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::config(
            "mppt.sweep_grid_v",
            "thresholds must be positive and strictly increasing",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold_v: f64,
    pub avg_power_w: Option<f64>,
    /// Relative energy-ledger residual of the run.
    pub ledger_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticSweep {
    pub points: Vec<SweepPoint>,
    /// Best `(threshold, power)` among the points that ran.
    pub best: Option<(f64, f64)>,
}

impl StaticSweep {
    pub fn best_threshold_v(&self) -> Option<f64> {
        self.best.map(|b| b.0)
    }

    pub fn best_power_w(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }

    /// CSV `threshold_v,avg_power_w`; failed points read `NaN`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold_v,avg_power_w\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{}\n",
                p.threshold_v,
                p.avg_power_w.unwrap_or(f64::NAN)
            ));
        }
        s
    }
}

/// Runs `base` once per threshold with the converter held at that
/// threshold and reports the average harvested power of each.
pub fn static_sweep(base: &SimConfig, sweep_grid: &[f64]) -> Result<StaticSweep> {
    if base.topology.converter().is_none() {
        return Err(Error::Argument(
            "static sweep needs the ConverterBased topology".into(),
        ));
    }
    check_grid(sweep_grid)?;
    let points: Vec<SweepPoint> = sweep_grid
        .par_iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.control = ThresholdControl::Fixed;
            cfg.trace_rate_hz = 0.0;
            if let Some(c) = cfg.topology.converter_mut() {
                c.v_threshold_v = v;
            }
            match run_sim(&cfg) {
                Ok(trace) => SweepPoint {
                    threshold_v: v,
                    avg_power_w: Some(trace.summary().avg_harvested_power_w),
                    ledger_residual: Some(trace.ledger.max_relative_residual()),
                    error: None,
                },
                Err(e) => SweepPoint {
                    threshold_v: v,
                    avg_power_w: None,
                    ledger_residual: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for p in &points {
        if let Some(pw) = p.avg_power_w {
            if best.map_or(true, |(_, bp)| pw > bp) {
                best = Some((p.threshold_v, pw));
            }
        }
    }
    Ok(StaticSweep { points, best })
}

/// MPP voltage of the quasi-static rectified IV curve at the mechanical
/// amplitude implied by the current state, `(θX/Cp - 2vd) / 2` with
/// `X = sqrt(x² + (v/ω)²)`.
pub fn instantaneous_mpp(model: &PiezoModel, state: &PiezoState, omega: f64, vd_v: f64) -> f64 {
    let amp = state.x_m.hypot(state.v_mps / omega);
    let voc = model.coupling_n_per_v * amp / model.cp_farad - 2.0 * vd_v;
    (0.5 * voc).max(0.0)
}

/// Initial condition of a tracking study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StudyStart {
    /// Transducer at rest: the MPP moves while the beam rings up.
    #[default]
    Rest,
    /// Transducer settled at its steady MPP: the source no longer varies.
    Settled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingRow {
    pub f_t_hz: f64,
    pub avg_power_w: f64,
    /// Larger of the transducer and bridge relative energy residuals.
    pub ledger_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingStudy {
    pub rows: Vec<TrackingRow>,
    /// Per-update `(time, MPP voltage)` for each tracking rate.
    pub traces: Vec<Vec<(f64, f64)>>,
}

impl TrackingStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("f_t_hz,avg_power_w\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.f_t_hz, r.avg_power_w));
        }
        s
    }

    /// CSV `time_s,v_mpp_v` of the trace at index `k`.
    pub fn trace_csv(&self, k: usize) -> String {
        let mut s = String::from("time_s,v_mpp_v\n");
        for (t, v) in &self.traces[k] {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }
}

struct OracleRun {
    state: PiezoState,
    bridge: Bridge,
    energy: f64,
    trace: Vec<(f64, f64)>,
    flows: PortFlows,
    pin: f64,
    switching: f64,
    diode: f64,
}

impl OracleRun {
    fn ledger_residual(&self, model: &PiezoModel, start: &PiezoState) -> f64 {
        let electrical = self.flows.e_out + self.pin;
        let mech = EnergyBalance {
            flows: PortFlows {
                e_out: electrical,
                ..self.flows
            },
            stored_delta: model.stored_energy(&self.state) - model.stored_energy(start),
        };
        let bridge = electrical - (self.energy + self.diode + self.switching);
        let bridge_rel = if electrical > 0.0 {
            bridge.abs() / electrical
        } else {
            bridge.abs()
        };
        mech.relative_residual().max(bridge_rel)
    }
}

/// Harvests through a bridge at a DC voltage reset to the instantaneous
/// MPP every `update_steps` steps, for `steps` steps from step index `n0`.
#[allow(clippy::too_many_arguments)]
fn oracle_run(
    model: &PiezoModel,
    profile: &VibrationProfile,
    vd: f64,
    h: f64,
    n0: u64,
    steps: u64,
    update_steps: u64,
    start: PiezoState,
    bridge: Bridge,
) -> OracleRun {
    let dyn_ = model.dynamics();
    let omega = profile.omega();
    let mut run = OracleRun {
        state: start,
        bridge,
        energy: 0.0,
        trace: Vec::new(),
        flows: PortFlows::default(),
        pin: 0.0,
        switching: 0.0,
        diode: 0.0,
    };
    let mut v_set = 0.0;
    for k in 0..steps {
        let n = n0 + k;
        let t = n as f64 * h;
        if k % update_steps == 0 {
            v_set = instantaneous_mpp(model, &run.state, omega, vd);
            run.trace.push((t, v_set));
        }
        let out = run
            .bridge
            .advance(&dyn_, &run.state, t, h, v_set + 2.0 * vd, profile);
        run.state = out.state;
        run.energy += v_set * out.charge_dc;
        run.diode += 2.0 * vd * out.charge_dc;
        run.flows += out.flows;
        run.pin += out.pin_energy;
        run.switching += out.switching_loss;
    }
    run
}

/// Average DC-side power when the harvesting voltage is reset to the
/// instantaneous MPP at each tracking rate in `f_t_grid`.
pub fn tracking_study(
    model: &PiezoModel,
    profile: &VibrationProfile,
    rectifier: &RectifierParams,
    f_t_grid: &[f64],
    dt: f64,
    start: StudyStart,
) -> Result<TrackingStudy> {
    model.validate()?;
    profile.validate()?;
    rectifier.validate()?;
    model.check_step(dt)?;
    for &f in f_t_grid {
        check_rate(f)?;
    }
    let steps_per_cycle = cycle_steps(profile, dt);
    let h = profile.period() / steps_per_cycle as f64;
    let (n0, state0, bridge0) = match start {
        StudyStart::Rest => (0, PiezoState::default(), Bridge::default()),
        StudyStart::Settled => {
            let cycles = (20.0 * model.ring_time() / profile.period()).ceil() as u64;
            let n = cycles * steps_per_cycle as u64;
            let warm = oracle_run(
                model,
                profile,
                rectifier.vd_v,
                h,
                0,
                n,
                steps_per_cycle as u64,
                PiezoState::default(),
                Bridge::default(),
            );
            (n, warm.state, warm.bridge)
        }
    };
    let steps = (profile.duration_s / h).round() as u64;
    let runs: Vec<OracleRun> = f_t_grid
        .par_iter()
        .map(|&f_t| {
            let update = ((1.0 / (f_t * h)).round() as u64).max(1);
            oracle_run(model, profile, rectifier.vd_v, h, n0, steps, update, state0, bridge0)
        })
        .collect();
    let duration = steps as f64 * h;
    let mut rows = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    for (run, &f_t) in runs.into_iter().zip(f_t_grid) {
        if !run.state.is_finite() {
            return Err(Error::Divergence {
                step: n0 + steps,
                t_s: (n0 + steps) as f64 * h,
                x_m: run.state.x_m,
                v_mps: run.state.v_mps,
                vp_v: run.state.vp_v,
                v_cap_v: f64::NAN,
            });
        }
        rows.push(TrackingRow {
            f_t_hz: f_t,
            avg_power_w: run.energy / duration,
            ledger_residual: run.ledger_residual(model, &state0),
        });
        traces.push(run.trace);
    }
    Ok(TrackingStudy { rows, traces })
}

/// One open-circuit sample of the fractional tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OcvSample {
    /// End of the disconnect window.
    pub time_s: f64,
    pub voc_v: f64,
    /// Threshold in force after the sample.
    pub threshold_v: f64,
}

/// Fractional open-circuit-voltage tracker: every sample interval the
/// harvester is disconnected for the sample duration, the electrode swing
/// is observed and the threshold is set to `k` times the implied DC
/// open-circuit voltage. The first sample starts at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalOcvTracker {
    k_fraction: f64,
    interval_s: f64,
    duration_s: f64,
    two_vd: f64,
    next_sample_s: f64,
    window_end_s: Option<f64>,
    vp_max: f64,
    vp_min: f64,
    samples: Vec<OcvSample>,
}

impl FractionalOcvTracker {
    pub fn new(
        k_fraction: f64,
        converter: &ConverterParams,
        vd_v: f64,
        profile: &VibrationProfile,
    ) -> Result<Self> {
        if !(k_fraction > 0.0 && k_fraction < 1.0) {
            return Err(Error::config("mppt.k_fraction", "must lie in (0, 1)"));
        }
        if converter.mpp_sample_duration_s < profile.period() {
            return Err(Error::config(
                "topology.converter.mpp_sample_duration_s",
                format!(
                    "{} s is shorter than one excitation period ({} s)",
                    converter.mpp_sample_duration_s,
                    profile.period()
                ),
            ));
        }
        Ok(Self {
            k_fraction,
            interval_s: converter.mpp_sample_interval_s,
            duration_s: converter.mpp_sample_duration_s,
            two_vd: 2.0 * vd_v,
            next_sample_s: 0.0,
            window_end_s: None,
            vp_max: f64::NEG_INFINITY,
            vp_min: f64::INFINITY,
            samples: Vec::new(),
        })
    }

    /// Opens or closes a disconnect window at time `t`, before the step
    /// starting at `t`. Returns the new threshold when a sample completes
    /// with a usable reading.
    pub fn fractional_ocv_step(&mut self, t: f64, fe: &mut FrontendState) -> Option<f64> {
        let eps = 1e-9;
        let mut updated = None;
        if let Some(end) = self.window_end_s {
            if t >= end - eps {
                let voc = 0.5 * (self.vp_max - self.vp_min) - self.two_vd;
                if voc > 0.0 {
                    fe.threshold_v = self.k_fraction * voc;
                    updated = Some(fe.threshold_v);
                }
                fe.disconnected = false;
                self.window_end_s = None;
                self.samples.push(OcvSample {
                    time_s: t,
                    voc_v: voc,
                    threshold_v: fe.threshold_v,
                });
            }
        }
        if self.window_end_s.is_none() && t >= self.next_sample_s - eps {
            fe.disconnected = true;
            self.window_end_s = Some(t + self.duration_s);
            self.vp_max = f64::NEG_INFINITY;
            self.vp_min = f64::INFINITY;
            self.next_sample_s += self.interval_s;
        }
        updated
    }

    pub(crate) fn before_step(&mut self, t: f64, fe: &mut FrontendState) {
        self.fractional_ocv_step(t, fe);
    }

    /// Records the electrode voltage after a step.
    pub fn observe(&mut self, state: &PiezoState) {
        if self.window_end_s.is_some() {
            self.vp_max = self.vp_max.max(state.vp_v);
            self.vp_min = self.vp_min.min(state.vp_v);
        }
    }

    pub fn samples(&self) -> &[OcvSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<OcvSample> {
        self.samples
    }
}

/// Topology with the converter threshold replaced.
pub fn with_threshold(topology: &Topology, v_threshold_v: f64) -> Topology {
    let mut t = topology.clone();
    if let Some(c) = t.converter_mut() {
        c.v_threshold_v = v_threshold_v;
    }
    t
}
