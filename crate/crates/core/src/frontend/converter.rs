//! Averaged boost-converter model: an ideal input clamp at the threshold
//! voltage, an efficiency surface over input voltage and current, and a
//! standby draw from the storage capacitor.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// One node of the efficiency surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyPoint {
    pub v_in_v: f64,
    pub i_in_a: f64,
    pub eta: f64,
}

/// Efficiency on a rectilinear (voltage × current) grid, bilinear in
/// between and held constant beyond the outermost nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EfficiencyPoint>", into = "Vec<EfficiencyPoint>")]
pub struct EfficiencyTable {
    v_axis: Vec<f64>,
    i_axis: Vec<f64>,
    /// Row-major: `eta[iv * i_axis.len() + ii]`.
    eta: Vec<f64>,
}

impl Default for EfficiencyTable {
    /// Anchored at 0.80 for 1 V / 100 µA and rising with voltage and
    /// current. Each node takes the lower of its voltage and current
    /// ratings; apart from the anchor these are placeholders.
    fn default() -> Self {
        let v_axis = vec![0.5, 1.0, 2.0, 3.0];
        let i_axis = vec![10e-6, 100e-6, 1e-3, 10e-3];
        let rating = [0.55, 0.80, 0.90, 0.90];
        let mut eta = Vec::with_capacity(16);
        for rv in rating {
            for ri in rating {
                eta.push(f64::min(rv, ri));
            }
        }
        Self {
            v_axis,
            i_axis,
            eta,
        }
    }
}

impl TryFrom<Vec<EfficiencyPoint>> for EfficiencyTable {
    type Error = Error;

    fn try_from(points: Vec<EfficiencyPoint>) -> Result<Self> {
        Self::from_points(&points)
    }
}

impl From<EfficiencyTable> for Vec<EfficiencyPoint> {
    fn from(t: EfficiencyTable) -> Self {
        t.points()
    }
}

fn axis(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut a: Vec<f64> = values.collect();
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

impl EfficiencyTable {
    const KEY: &'static str = "topology.converter.efficiency";

    /// Builds the table from scattered nodes that must cover every
    /// (voltage, current) combination of their axes exactly once.
    pub fn from_points(points: &[EfficiencyPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config(Self::KEY, "no points"));
        }
        for p in points {
            if !(p.v_in_v.is_finite() && p.i_in_a.is_finite()) {
                return Err(Error::config(Self::KEY, "non-finite coordinate"));
            }
            if !(p.eta > 0.0 && p.eta <= 1.0) {
                return Err(Error::config(
                    Self::KEY,
                    format!("eta {} outside (0, 1]", p.eta),
                ));
            }
        }
        let v_axis = axis(points.iter().map(|p| p.v_in_v));
        let i_axis = axis(points.iter().map(|p| p.i_in_a));
        let mut eta = vec![f64::NAN; v_axis.len() * i_axis.len()];
        for p in points {
            let iv = v_axis.iter().position(|&v| v == p.v_in_v).unwrap();
            let ii = i_axis.iter().position(|&i| i == p.i_in_a).unwrap();
            let slot = &mut eta[iv * i_axis.len() + ii];
            if !slot.is_nan() {
                return Err(Error::config(
                    Self::KEY,
                    format!("duplicate point ({} V, {} A)", p.v_in_v, p.i_in_a),
                ));
            }
            *slot = p.eta;
        }
        if eta.iter().any(|e| e.is_nan()) {
            return Err(Error::config(
                Self::KEY,
                format!(
                    "points must form a complete {}x{} voltage-current grid",
                    v_axis.len(),
                    i_axis.len()
                ),
            ));
        }
        Ok(Self {
            v_axis,
            i_axis,
            eta,
        })
    }

    /// Parses CSV with header `v_in_v,i_in_a,eta`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["v_in_v", "i_in_a", "eta"] {
            return Err(Error::config(
                Self::KEY,
                format!("expected header `v_in_v,i_in_a,eta`, got `{header}`"),
            ));
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match vals.as_deref() {
                Ok([v, i, e]) => points.push(EfficiencyPoint {
                    v_in_v: *v,
                    i_in_a: *i,
                    eta: *e,
                }),
                _ => {
                    return Err(Error::config(
                        Self::KEY,
                        format!("line {}: expected three numbers", n + 2),
                    ))
                }
            }
        }
        Self::from_points(&points)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(Self::KEY, format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_csv_str(&text)
    }

    pub fn points(&self) -> Vec<EfficiencyPoint> {
        let mut out = Vec::with_capacity(self.eta.len());
        for (iv, &v) in self.v_axis.iter().enumerate() {
            for (ii, &i) in self.i_axis.iter().enumerate() {
                out.push(EfficiencyPoint {
                    v_in_v: v,
                    i_in_a: i,
                    eta: self.eta[iv * self.i_axis.len() + ii],
                });
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("v_in_v,i_in_a,eta\n");
        for p in self.points() {
            s.push_str(&format!("{},{},{}\n", p.v_in_v, p.i_in_a, p.eta));
        }
        s
    }

    /// Efficiency at input voltage `v` and input current `i`.
    pub fn eta(&self, v: f64, i: f64) -> f64 {
        let (iv, fv) = bracket(&self.v_axis, v);
        let (ii, fi) = bracket(&self.i_axis, i);
        let n = self.i_axis.len();
        let at = |a: usize, b: usize| self.eta[a * n + b];
        let iv1 = (iv + 1).min(self.v_axis.len() - 1);
        let ii1 = (ii + 1).min(n - 1);
        let lo = at(iv, ii) * (1.0 - fi) + at(iv, ii1) * fi;
        let hi = at(iv1, ii) * (1.0 - fi) + at(iv1, ii1) * fi;
        (lo * (1.0 - fv) + hi * fv).clamp(0.0, 1.0)
    }
}

/// Lower node index and fractional position of `x` on a sorted axis,
/// clamped to its ends.
fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if last == 0 || x <= axis[0] || x.is_nan() {
        return (0, 0.0);
    }
    if x >= axis[last] {
        return (last, 0.0);
    }
    let k = axis.partition_point(|&a| a <= x) - 1;
    (k, (x - axis[k]) / (axis[k + 1] - axis[k]))
}

/// How the standby draw depends on the capacitor voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuiescentScaling {
    /// `quiescent_w` regardless of voltage.
    #[default]
    Constant,
    /// `quiescent_w · v_cap / 3 V`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterParams {
    /// Regulated DC voltage behind the rectifier.
    pub v_threshold_v: f64,
    /// Standby draw from the capacitor at 3 V.
    pub quiescent_w: f64,
    pub quiescent_scaling: QuiescentScaling,
    pub efficiency: EfficiencyTable,
    pub mpp_sample_interval_s: f64,
    /// Harvester disconnect time per open-circuit sample.
    pub mpp_sample_duration_s: f64,
    /// Time constant of the input-current average used for the efficiency
    /// lookup.
    pub input_averaging_s: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            v_threshold_v: 1.0,
            quiescent_w: 4.2e-6,
            quiescent_scaling: QuiescentScaling::Constant,
            efficiency: EfficiencyTable::default(),
            mpp_sample_interval_s: 16.0,
            mpp_sample_duration_s: 0.256,
            input_averaging_s: 0.04,
        }
    }
}

impl ConverterParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("topology.converter.v_threshold_v", self.v_threshold_v),
            ("topology.converter.mpp_sample_interval_s", self.mpp_sample_interval_s),
            ("topology.converter.mpp_sample_duration_s", self.mpp_sample_duration_s),
            ("topology.converter.input_averaging_s", self.input_averaging_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        if !(self.quiescent_w >= 0.0 && self.quiescent_w.is_finite()) {
            return Err(Error::config("topology.converter.quiescent_w", "must be >= 0"));
        }
        if self.mpp_sample_duration_s >= self.mpp_sample_interval_s {
            return Err(Error::config(
                "topology.converter.mpp_sample_duration_s",
                "must be shorter than mpp_sample_interval_s",
            ));
        }
        Ok(())
    }

    /// Standby power at capacitor voltage `v_cap`.
    pub fn quiescent_power(&self, v_cap: f64) -> f64 {
        match self.quiescent_scaling {
            QuiescentScaling::Constant => self.quiescent_w,
            QuiescentScaling::Linear => self.quiescent_w * v_cap.max(0.0) / 3.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_point_reaches_eighty_percent() {
        let t = EfficiencyTable::default();
        assert!(t.eta(1.0, 100e-6) >= 0.80);
        assert_eq!(t.eta(0.5, 10e-6), 0.55);
        assert_eq!(t.eta(3.0, 10e-3), 0.90);
    }

    #[test]
    fn interpolation_is_bilinear_and_clamped() {
        let t = EfficiencyTable::from_points(&[
            EfficiencyPoint { v_in_v: 0.0, i_in_a: 0.0, eta: 0.2 },
            EfficiencyPoint { v_in_v: 1.0, i_in_a: 0.0, eta: 0.4 },
            EfficiencyPoint { v_in_v: 0.0, i_in_a: 1.0, eta: 0.6 },
            EfficiencyPoint { v_in_v: 1.0, i_in_a: 1.0, eta: 1.0 },
        ])
        .unwrap();
        // hand evaluation at the cell centre: mean of the four corners
        assert!((t.eta(0.5, 0.5) - 0.55).abs() < 1e-15);
        assert!((t.eta(0.25, 0.0) - 0.25).abs() < 1e-15);
        assert_eq!(t.eta(-3.0, -1.0), 0.2);
        assert_eq!(t.eta(5.0, 7.0), 1.0);
    }

    #[test]
    fn incomplete_grid_is_rejected() {
        let err = EfficiencyTable::from_points(&[
            EfficiencyPoint { v_in_v: 0.5, i_in_a: 10e-6, eta: 0.55 },
            EfficiencyPoint { v_in_v: 1.0, i_in_a: 100e-6, eta: 0.8 },
        ])
        .unwrap_err();
        assert!(err.to_string().contains("complete"), "{err}");
        assert!(EfficiencyTable::from_points(&[EfficiencyPoint {
            v_in_v: 1.0,
            i_in_a: 1.0,
            eta: 1.2
        }])
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = EfficiencyTable::default();
        let back = EfficiencyTable::from_csv_str(&t.to_csv()).unwrap();
        assert_eq!(t, back);
        assert!(EfficiencyTable::from_csv_str("v,i,eta\n1,1,1\n").is_err());
        assert!(EfficiencyTable::from_csv_str("v_in_v,i_in_a,eta\n1,x,1\n").is_err());
    }

    #[test]
    fn quiescent_scaling() {
        let mut p = ConverterParams::default();
        assert_eq!(p.quiescent_power(1.0), 4.2e-6);
        p.quiescent_scaling = QuiescentScaling::Linear;
        assert!((p.quiescent_power(3.0) - 4.2e-6).abs() < 1e-20);
        assert!((p.quiescent_power(1.5) - 2.1e-6).abs() < 1e-20);
    }
}
