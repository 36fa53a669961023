//! Single-mode piezoelectric cantilever.
//!
//! The transducer is a linear mass-spring-damper coupled to its clamped
//! electrode capacitance:
//!
//! ```text
//! m x'' + c x' + k x + theta vp = F(t)
//! Cp vp'                        = theta x' - vp / Rp - i_out
//! ```
//!
//! The electrical port is driven either by an imposed current (`i_out`,
//! zero when the rectifier blocks) or by an imposed voltage (the rectifier
//! conducting into a stiff DC node). Every integration also accumulates the
//! energy flows needed to close the transducer energy balance.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::excitation::{Forcing, VibrationProfile};
use crate::frontend::rectifier::{Bridge, RectifierParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiezoModel {
    /// Short-circuit mechanical resonance.
    pub f0_hz: f64,
    pub q_factor: f64,
    pub mass_kg: f64,
    /// Electromechanical coupling theta, N/V (= C/m).
    pub coupling_n_per_v: f64,
    /// Clamped electrode capacitance.
    pub cp_farad: f64,
    /// Dielectric leakage resistance.
    pub rp_ohm: f64,
}

impl Default for PiezoModel {
    fn default() -> Self {
        Self {
            f0_hz: 25.0,
            q_factor: 35.0,
            mass_kg: 24.62e-3,
            coupling_n_per_v: 6.0e-4,
            cp_farad: 120e-9,
            rp_ohm: 5e6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiezoState {
    pub x_m: f64,
    pub v_mps: f64,
    pub vp_v: f64,
}

impl PiezoState {
    pub fn is_finite(&self) -> bool {
        self.x_m.is_finite() && self.v_mps.is_finite() && self.vp_v.is_finite()
    }
}

/// What the electrical port is connected to during an integration segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    /// Imposed output current, amperes.
    Current(f64),
    /// Electrode voltage pinned to this value.
    Voltage(f64),
}

/// Energy and charge that crossed the transducer boundaries during a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PortFlows {
    pub work_in: f64,
    pub damping: f64,
    pub leakage: f64,
    /// Electrical energy out of the electrodes, `∫ vp i_out dt`.
    pub e_out: f64,
    /// Charge out of the positive electrode, `∫ i_out dt`.
    pub q_out: f64,
}

impl AddAssign for PortFlows {
    fn add_assign(&mut self, rhs: Self) {
        self.work_in += rhs.work_in;
        self.damping += rhs.damping;
        self.leakage += rhs.leakage;
        self.e_out += rhs.e_out;
        self.q_out += rhs.q_out;
    }
}

/// Energy bookkeeping for a transducer-only experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBalance {
    pub flows: PortFlows,
    pub stored_delta: f64,
}

impl EnergyBalance {
    /// `work_in - (Δstored + damping + leakage + e_out)`.
    pub fn residual(&self) -> f64 {
        let f = &self.flows;
        f.work_in - (self.stored_delta + f.damping + f.leakage + f.e_out)
    }

    /// Residual as a fraction of gross mechanical input (0 when idle).
    pub fn relative_residual(&self) -> f64 {
        let gross = self.flows.work_in.abs().max(self.flows.damping);
        if gross == 0.0 {
            self.residual().abs()
        } else {
            self.residual().abs() / gross
        }
    }
}

/// Precomputed coefficients of the coupled equations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dynamics {
    m: f64,
    k: f64,
    c: f64,
    theta: f64,
    cp: f64,
    g_leak: f64,
}

impl PiezoModel {
    pub fn stiffness(&self) -> f64 {
        self.mass_kg * (2.0 * PI * self.f0_hz).powi(2)
    }

    pub fn damping(&self) -> f64 {
        2.0 * PI * self.f0_hz * self.mass_kg / self.q_factor
    }

    /// Largest admissible integration step.
    pub fn max_step(&self) -> f64 {
        1.0 / (200.0 * self.f0_hz)
    }

    /// Amplitude e-folding time of the free mechanical mode, `2m/c`.
    pub fn ring_time(&self) -> f64 {
        self.q_factor / (PI * self.f0_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("transducer.f0_hz", self.f0_hz),
            ("transducer.q_factor", self.q_factor),
            ("transducer.mass_kg", self.mass_kg),
            ("transducer.cp_farad", self.cp_farad),
            ("transducer.rp_ohm", self.rp_ohm),
        ];
        for (key, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        // zero coupling is allowed: it decouples the mechanics for testing
        if !(self.coupling_n_per_v >= 0.0 && self.coupling_n_per_v.is_finite()) {
            return Err(Error::config("transducer.coupling_n_per_v", "must be >= 0"));
        }
        Ok(())
    }

    pub fn check_step(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || dt > self.max_step() {
            return Err(Error::config(
                "sim.dt_s",
                format!(
                    "step {dt} s outside (0, {}] (1/(200 f0))",
                    self.max_step()
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn dynamics(&self) -> Dynamics {
        Dynamics {
            m: self.mass_kg,
            k: self.stiffness(),
            c: self.damping(),
            theta: self.coupling_n_per_v,
            cp: self.cp_farad,
            g_leak: 1.0 / self.rp_ohm,
        }
    }

    /// Kinetic + elastic + electrostatic energy.
    pub fn stored_energy(&self, s: &PiezoState) -> f64 {
        0.5 * self.mass_kg * s.v_mps * s.v_mps
            + 0.5 * self.stiffness() * s.x_m * s.x_m
            + 0.5 * self.cp_farad * s.vp_v * s.vp_v
    }

    /// Advances the state by `dt` with the electrodes sourcing a constant
    /// `i_out`, using classical RK4. `force` is sampled at the stage times,
    /// so a plain `f64` acts as a zero-order hold.
    pub fn step<F: Forcing>(
        &self,
        state: &PiezoState,
        t: f64,
        force: F,
        i_out: f64,
        dt: f64,
    ) -> Result<PiezoState> {
        self.check_step(dt)?;
        let (next, _) = self
            .dynamics()
            .integrate(state, t, dt, Terminal::Current(i_out), &force);
        Ok(next)
    }

    /// Steady open-circuit peak `|vp|` under the given excitation.
    ///
    /// Runs from rest with the electrodes open until the per-cycle peak moves
    /// by less than 0.5 % for five consecutive cycles.
    pub fn open_circuit_amplitude(&self, profile: &VibrationProfile, dt: f64) -> Result<f64> {
        self.validate()?;
        profile.validate()?;
        let steps_per_cycle = cycle_steps(profile, dt);
        let h = profile.period() / steps_per_cycle as f64;
        self.check_step(h)?;
        let dyn_ = self.dynamics();
        let force = *profile;

        const MAX_CYCLES: usize = 2000;
        let mut state = PiezoState::default();
        let mut previous: Option<f64> = None;
        let mut calm = 0;
        let mut n: u64 = 0;
        for _ in 0..MAX_CYCLES {
            let mut peak = 0.0_f64;
            for _ in 0..steps_per_cycle {
                let t = n as f64 * h;
                state = dyn_.integrate(&state, t, h, Terminal::Current(0.0), &force).0;
                peak = peak.max(state.vp_v.abs());
                n += 1;
            }
            if let Some(prev) = previous {
                let change = if peak == 0.0 {
                    0.0
                } else {
                    (peak - prev).abs() / peak
                };
                calm = if change < 0.005 { calm + 1 } else { 0 };
                if calm >= 5 {
                    return Ok(peak);
                }
            }
            previous = Some(peak);
        }
        Err(Error::Convergence {
            what: "open-circuit amplitude".into(),
            cycles: MAX_CYCLES,
        })
    }

    /// Emulates a source-meter sweep of the rectified output.
    ///
    /// For each grid voltage the DC side of a full bridge is held at that
    /// voltage; after `settle_cycles` excitation cycles the rectified current
    /// is averaged over [`IV_AVERAGING_CYCLES`] cycles. The state carries
    /// over from one grid point to the next, and the first point settles
    /// three times as long to ring up from rest. The sweep stops at the first
    /// point that draws no current.
    pub fn measure_iv_curve(
        &self,
        profile: &VibrationProfile,
        rectifier: &RectifierParams,
        v_grid: &[f64],
        settle_cycles: usize,
        dt: f64,
    ) -> Result<IvCurve> {
        if v_grid.is_empty() {
            return Err(Error::Argument("empty voltage grid".into()));
        }
        if v_grid[0] < 0.0 || v_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument(
                "voltage grid must start at >= 0 and be strictly increasing".into(),
            ));
        }
        self.validate()?;
        profile.validate()?;
        rectifier.validate()?;
        let steps_per_cycle = cycle_steps(profile, dt);
        let h = profile.period() / steps_per_cycle as f64;
        self.check_step(h)?;

        let dyn_ = self.dynamics();
        let force = *profile;
        let mut bridge = Bridge::default();
        let mut state = PiezoState::default();
        let mut balance = EnergyBalance::default();
        let mut n: u64 = 0;
        let mut samples: Vec<IvSample> = Vec::new();

        for (idx, &v_dc) in v_grid.iter().enumerate() {
            let clamp = v_dc + 2.0 * rectifier.vd_v;
            let settle = if idx == 0 { 3 * settle_cycles } else { settle_cycles };
            let mut charge = 0.0;
            let mut x_peak = 0.0_f64;
            let total = (settle + IV_AVERAGING_CYCLES) * steps_per_cycle;
            for i in 0..total {
                let t = n as f64 * h;
                let out = bridge.advance(&dyn_, &state, t, h, clamp, &force);
                state = out.state;
                balance.flows += out.flows;
                if i >= settle * steps_per_cycle {
                    charge += out.charge_dc;
                    x_peak = x_peak.max(state.x_m.abs());
                }
                n += 1;
            }
            if !state.is_finite() {
                return Err(Error::Divergence {
                    step: n,
                    t_s: n as f64 * h,
                    x_m: state.x_m,
                    v_mps: state.v_mps,
                    vp_v: state.vp_v,
                    v_cap_v: v_dc,
                });
            }
            let current = charge / (IV_AVERAGING_CYCLES as f64 * profile.period());
            samples.push(IvSample {
                voltage_v: v_dc,
                current_a: current,
                measured_a: current,
                x_peak_m: x_peak,
            });
            if current <= 0.0 {
                break;
            }
        }
        balance.stored_delta = self.stored_energy(&state);
        IvCurve::from_samples(samples, balance, true)
    }
}

impl PiezoModel {
    /// Voltage grid for [`PiezoModel::measure_iv_curve`]: `points` equal
    /// steps up to the open-circuit DC voltage estimated from the
    /// open-circuit electrode swing, extended by half again so the sweep
    /// reaches zero current.
    pub fn adaptive_iv_grid(
        &self,
        profile: &VibrationProfile,
        rectifier: &RectifierParams,
        dt: f64,
        points: usize,
    ) -> Result<Vec<f64>> {
        let points = points.max(2);
        let dc_voc = self.open_circuit_amplitude(profile, dt)? - 2.0 * rectifier.vd_v;
        if dc_voc <= 0.0 {
            return Ok(vec![0.0, 0.1]);
        }
        let step = dc_voc / points as f64;
        Ok((0..=(3 * points / 2)).map(|k| k as f64 * step).collect())
    }
}

/// Cycles over which each IV point's current is averaged.
pub const IV_AVERAGING_CYCLES: usize = 10;

/// Steps per excitation period such that the step does not exceed `dt`.
pub(crate) fn cycle_steps(profile: &VibrationProfile, dt: f64) -> usize {
    (profile.period() / dt).ceil().max(1.0) as usize
}

impl Dynamics {
    /// One RK4 step of length `h` with the given port condition.
    #[inline]
    pub(crate) fn integrate<F: Forcing + ?Sized>(
        &self,
        s: &PiezoState,
        t: f64,
        h: f64,
        terminal: Terminal,
        force: &F,
    ) -> (PiezoState, PortFlows) {
        let f_start = force.force(t);
        let f_mid = force.force(t + 0.5 * h);
        let f_end = force.force(t + h);
        let Dynamics {
            m,
            k,
            c,
            theta,
            cp,
            g_leak,
        } = *self;

        // y = [x, v, vp]; returns dy plus instantaneous flow rates
        let deriv = |f: f64, x: f64, v: f64, vp: f64| -> ([f64; 3], [f64; 5]) {
            let (vp_eff, i_out, dvp) = match terminal {
                Terminal::Current(i) => (vp, i, (theta * v - vp * g_leak - i) / cp),
                Terminal::Voltage(u) => (u, theta * v - u * g_leak, 0.0),
            };
            let dv = (f - c * v - k * x - theta * vp_eff) / m;
            (
                [v, dv, dvp],
                [f * v, c * v * v, vp_eff * vp_eff * g_leak, vp_eff * i_out, i_out],
            )
        };

        let vp0 = match terminal {
            Terminal::Voltage(u) => u,
            Terminal::Current(_) => s.vp_v,
        };
        let (x0, v0) = (s.x_m, s.v_mps);
        let half = 0.5 * h;
        let (d1, r1) = deriv(f_start, x0, v0, vp0);
        let (d2, r2) = deriv(f_mid, x0 + half * d1[0], v0 + half * d1[1], vp0 + half * d1[2]);
        let (d3, r3) = deriv(f_mid, x0 + half * d2[0], v0 + half * d2[1], vp0 + half * d2[2]);
        let (d4, r4) = deriv(f_end, x0 + h * d3[0], v0 + h * d3[1], vp0 + h * d3[2]);

        let w = h / 6.0;
        let comb = |i: usize| w * (r1[i] + 2.0 * r2[i] + 2.0 * r3[i] + r4[i]);
        let next = PiezoState {
            x_m: x0 + w * (d1[0] + 2.0 * d2[0] + 2.0 * d3[0] + d4[0]),
            v_mps: v0 + w * (d1[1] + 2.0 * d2[1] + 2.0 * d3[1] + d4[1]),
            vp_v: vp0 + w * (d1[2] + 2.0 * d2[2] + 2.0 * d3[2] + d4[2]),
        };
        let q_out = comb(4);
        let e_out = match terminal {
            Terminal::Voltage(u) => u * q_out,
            Terminal::Current(_) => comb(3),
        };
        let flows = PortFlows {
            work_in: comb(0),
            damping: comb(1),
            leakage: comb(2),
            e_out,
            q_out,
        };
        (next, flows)
    }

    pub(crate) fn theta(&self) -> f64 {
        self.theta
    }

    pub(crate) fn cp(&self) -> f64 {
        self.cp
    }

    pub(crate) fn g_leak(&self) -> f64 {
        self.g_leak
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvSample {
    pub voltage_v: f64,
    /// Monotone (non-increasing) envelope of the measured current.
    pub current_a: f64,
    /// Cycle-averaged current as measured.
    pub measured_a: f64,
    /// Peak tip displacement during the averaging window.
    pub x_peak_m: f64,
}

/// Current-voltage characteristic at the rectified DC side.
#[derive(Debug, Clone, PartialEq)]
pub struct IvCurve {
    pub samples: Vec<IvSample>,
    /// Zero-current voltage, interpolated from the last conducting points.
    pub voc_v: f64,
    pub energy: EnergyBalance,
}

impl IvCurve {
    fn from_samples(
        mut samples: Vec<IvSample>,
        energy: EnergyBalance,
        strict: bool,
    ) -> Result<Self> {
        let mut floor = f64::INFINITY;
        for s in samples.iter_mut() {
            floor = floor.min(s.measured_a.max(0.0));
            s.current_a = floor;
        }
        let last = samples.last().expect("non-empty grid");
        let i_max = samples[0].current_a;
        if last.current_a > 0.0 {
            if strict && last.current_a > 0.01 * i_max {
                return Err(Error::Argument(format!(
                    "voltage grid ends at {} V while still conducting {} A",
                    last.voltage_v, last.current_a
                )));
            }
            let voc_v = last.voltage_v;
            return Ok(Self {
                samples,
                voc_v,
                energy,
            });
        }
        let n = samples.len();
        let voc_v = match n {
            1 => 0.0,
            2 => samples[1].voltage_v,
            _ => {
                let (a, b, z) = (&samples[n - 3], &samples[n - 2], &samples[n - 1]);
                let slope = (b.current_a - a.current_a) / (b.voltage_v - a.voltage_v);
                let crossing = if slope < 0.0 {
                    b.voltage_v - b.current_a / slope
                } else {
                    z.voltage_v
                };
                crossing.clamp(b.voltage_v, z.voltage_v)
            }
        };
        Ok(Self {
            samples,
            voc_v,
            energy,
        })
    }

    /// Builds a curve from known points (no measurement energy record). A
    /// curve that still conducts at its last point takes that point as `voc_v`.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("empty IV curve".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Argument("IV voltages must be strictly increasing".into()));
        }
        let samples = points
            .iter()
            .map(|&(v, i)| IvSample {
                voltage_v: v,
                current_a: i,
                measured_a: i,
                x_peak_m: 0.0,
            })
            .collect();
        Self::from_samples(samples, EnergyBalance::default(), false)
    }

    pub fn max_current(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.current_a)
    }

    /// CSV with header `voltage_v,current_a`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("voltage_v,current_a\n");
        for s in &self.samples {
            out.push_str(&format!("{},{}\n", s.voltage_v, s.current_a));
        }
        out
    }
}
