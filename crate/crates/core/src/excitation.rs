//! Base excitation driving the transducer.
//!
//! The drive is parameterised like a shaker setup: a single-tone sine given
//! as a signal-generator amplitude in millivolts peak-to-peak and a
//! frequency. `force_gain` converts the drive voltage amplitude into the
//! force acting on the seismic mass.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Force gain giving ~1 mW of rectified maximum power at 25 Hz / 1000 mV p-p
/// with the default transducer.
pub const DEFAULT_FORCE_GAIN: f64 = 0.14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VibrationProfile {
    pub amplitude_mvpp: f64,
    pub frequency_hz: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Newtons per volt of drive amplitude.
    #[serde(default = "default_force_gain")]
    pub force_gain: f64,
}

fn default_duration() -> f64 {
    60.0
}

fn default_force_gain() -> f64 {
    DEFAULT_FORCE_GAIN
}

impl Default for VibrationProfile {
    fn default() -> Self {
        Self {
            amplitude_mvpp: 1000.0,
            frequency_hz: 25.0,
            duration_s: default_duration(),
            force_gain: DEFAULT_FORCE_GAIN,
        }
    }
}

impl VibrationProfile {
    pub fn new(amplitude_mvpp: f64, frequency_hz: f64) -> Self {
        Self {
            amplitude_mvpp,
            frequency_hz,
            ..Self::default()
        }
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_mvpp >= 0.0 && self.amplitude_mvpp.is_finite()) {
            return Err(Error::config("profile.amplitude_mvpp", "must be >= 0"));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::config("profile.frequency_hz", "must be > 0"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("profile.duration_s", "must be > 0"));
        }
        if !(self.force_gain > 0.0 && self.force_gain.is_finite()) {
            return Err(Error::config("profile.force_gain", "must be > 0"));
        }
        Ok(())
    }

    /// Peak force in newtons.
    pub fn peak_force(&self) -> f64 {
        self.force_gain * self.amplitude_mvpp / 2000.0
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency_hz
    }

    #[inline]
    pub fn force_at(&self, t: f64) -> f64 {
        self.peak_force() * (self.omega() * t).sin()
    }
}

/// Anything that yields a force at a given time: a constant (zero-order
/// hold over a step), a closure, or a [`VibrationProfile`].
pub trait Forcing {
    fn force(&self, t: f64) -> f64;
}

impl Forcing for f64 {
    #[inline]
    fn force(&self, _t: f64) -> f64 {
        *self
    }
}

impl Forcing for VibrationProfile {
    #[inline]
    fn force(&self, t: f64) -> f64 {
        self.force_at(t)
    }
}

impl<F: Fn(f64) -> f64> Forcing for F {
    #[inline]
    fn force(&self, t: f64) -> f64 {
        self(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gain(amplitude_mvpp: f64, frequency_hz: f64) -> VibrationProfile {
        VibrationProfile {
            amplitude_mvpp,
            frequency_hz,
            duration_s: 1.0,
            force_gain: 1.0,
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_force() {
        assert_eq!(unit_gain(0.0, 17.0).force_at(0.1), 0.0);
    }

    #[test]
    fn force_is_zero_at_origin() {
        assert_eq!(unit_gain(400.0, 25.0).force_at(0.0), 0.0);
    }

    #[test]
    fn quarter_period_hits_peak() {
        // 400 mV p-p -> 0.2 V amplitude -> 0.2 N at 1 N/V
        let f = unit_gain(400.0, 25.0).force_at(0.01);
        assert!((f - 0.2).abs() < 1e-12, "{f}");
    }

    #[test]
    fn periodic_and_bounded() {
        let p = unit_gain(730.0, 13.0);
        let period = p.period();
        let mut peak = 0.0_f64;
        for i in 0..10_000 {
            let t = i as f64 * period / 10_000.0 + 3.0;
            let diff = (p.force_at(t) - p.force_at(t + period)).abs();
            assert!(diff <= 1e-9 * p.force_gain * p.amplitude_mvpp);
            peak = peak.max(p.force_at(t).abs());
        }
        let expected = p.force_gain * p.amplitude_mvpp / 2000.0;
        assert!((peak - expected).abs() <= 1e-3 * expected);
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = VibrationProfile::default();
        p.frequency_hz = 0.0;
        assert!(matches!(p.validate(), Err(Error::Config { key, .. }) if key == "profile.frequency_hz"));
        let mut p = VibrationProfile::default();
        p.amplitude_mvpp = -1.0;
        assert!(p.validate().is_err());
    }
}
