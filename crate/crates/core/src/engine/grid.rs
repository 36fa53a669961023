//! Frequency × amplitude × topology sweeps and the topology comparison.

use rayon::prelude::*;
use serde::Serialize;

use super::{run_sim, SimConfig, ThresholdControl};
use crate::error::{Error, Result};
use crate::frontend::{ConverterParams, RectifierParams, Topology, TopologyKind};
use crate::mppt::{default_sweep_grid, static_sweep, StaticSweep};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub frequencies_hz: Vec<f64>,
    pub amplitudes_mvpp: Vec<f64>,
    pub topologies: Vec<TopologyKind>,
    /// Thresholds tried per converter-based cell.
    pub sweep_grid_v: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![10.0, 20.0, 25.0, 30.0, 50.0],
            amplitudes_mvpp: vec![200.0, 400.0, 600.0, 800.0, 1000.0],
            topologies: vec![TopologyKind::ConverterLess, TopologyKind::ConverterBased],
            sweep_grid_v: default_sweep_grid(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies_hz.is_empty() {
            return Err(Error::config("grid.frequencies_hz", "empty"));
        }
        if self.amplitudes_mvpp.is_empty() {
            return Err(Error::config("grid.amplitudes_mvpp", "empty"));
        }
        if self.topologies.is_empty() {
            return Err(Error::config("grid.topologies", "empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.frequencies_hz {
            for a in &self.amplitudes_mvpp {
                for t in &self.topologies {
                    if !seen.insert((f.to_bits(), a.to_bits(), *t)) {
                        return Err(Error::config("grid", "duplicate grid cell"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, f64, TopologyKind)> {
        let mut out = Vec::new();
        for &f in &self.frequencies_hz {
            for &a in &self.amplitudes_mvpp {
                for &t in &self.topologies {
                    out.push((f, a, t));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub frequency_hz: f64,
    pub amplitude_mvpp: f64,
    pub topology: TopologyKind,
    pub avg_power_w: Option<f64>,
    pub best_threshold_v: Option<f64>,
    /// Largest relative ledger residual over the cell's runs.
    pub ledger_residual: Option<f64>,
    #[serde(skip)]
    pub sweep: Option<StaticSweep>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Converts a base configuration to the given cell.
fn cell_config(
    base: &SimConfig,
    rectifier: &RectifierParams,
    converter: &ConverterParams,
    f: f64,
    a: f64,
    kind: TopologyKind,
) -> SimConfig {
    let mut cfg = base.clone();
    cfg.profile.frequency_hz = f;
    cfg.profile.amplitude_mvpp = a;
    cfg.trace_rate_hz = 0.0;
    cfg.control = ThresholdControl::Fixed;
    cfg.topology = match kind {
        TopologyKind::ConverterLess => Topology::ConverterLess {
            rectifier: *rectifier,
        },
        TopologyKind::ConverterBased => Topology::ConverterBased {
            rectifier: *rectifier,
            converter: converter.clone(),
        },
    };
    cfg
}

/// Runs every cell of `grid` starting from `base`. Converter-based cells
/// pick their threshold with a static sweep; failures are kept in the row.
/// Rows come back in grid order whatever order cells finish in.
pub fn run_grid(base: &SimConfig, grid: &GridSpec) -> Result<SweepTable> {
    grid.validate()?;
    let rectifier = *base.topology.rectifier();
    let converter = base.topology.converter().cloned().unwrap_or_default();
    let rows = grid
        .cells()
        .into_par_iter()
        .map(|(f, a, kind)| {
            let cfg = cell_config(base, &rectifier, &converter, f, a, kind);
            let mut row = SweepRow {
                frequency_hz: f,
                amplitude_mvpp: a,
                topology: kind,
                avg_power_w: None,
                best_threshold_v: None,
                ledger_residual: None,
                sweep: None,
                error: None,
            };
            match kind {
                TopologyKind::ConverterLess => match run_sim(&cfg) {
                    Ok(t) => {
                        row.avg_power_w = Some(t.summary().avg_harvested_power_w);
                        row.ledger_residual = Some(t.ledger.max_relative_residual());
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
                TopologyKind::ConverterBased => match static_sweep(&cfg, &grid.sweep_grid_v) {
                    Ok(s) => {
                        row.avg_power_w = s.best_power_w();
                        row.best_threshold_v = s.best_threshold_v();
                        row.ledger_residual = s
                            .points
                            .iter()
                            .filter_map(|p| p.ledger_residual)
                            .reduce(f64::max);
                        if s.best.is_none() {
                            row.error = Some("every threshold failed".into());
                        }
                        row.sweep = Some(s);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
            }
            row
        })
        .collect();
    Ok(SweepTable { rows })
}

/// Converter-based over converter-less power of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Ratio {
    Finite(f64),
    /// Converter-less harvested nothing while converter-based did.
    Infinite,
    /// Neither harvested.
    Undefined,
}

impl Ratio {
    pub fn of(cb: f64, cl: f64) -> Self {
        if cl > 0.0 {
            Ratio::Finite(cb / cl)
        } else if cb > 0.0 {
            Ratio::Infinite
        } else {
            Ratio::Undefined
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Ratio::Finite(r) => Some(r),
            _ => None,
        }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ratio::Finite(r) => write!(f, "{r}"),
            Ratio::Infinite => f.write_str("∞ (converter-less below conduction threshold)"),
            Ratio::Undefined => f.write_str("none (no harvest in either design)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellRatio {
    pub frequency_hz: f64,
    pub amplitude_mvpp: f64,
    pub converter_less_w: f64,
    pub converter_based_w: f64,
    pub ratio: Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyMean {
    pub frequency_hz: f64,
    /// Mean of the finite ratios at this frequency.
    pub mean_ratio: Option<f64>,
    pub infinite_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub cells: Vec<CellRatio>,
    pub per_frequency: Vec<FrequencyMean>,
    pub resonance_hz: f64,
    /// Mean finite ratio in the resonance row.
    pub resonance_mean_ratio: Option<f64>,
    /// Cells without a usable result for both topologies.
    pub gaps: Vec<(f64, f64)>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "frequency_hz,amplitude_mvpp,converter_less_w,converter_based_w,ratio\n",
        );
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.frequency_hz,
                c.amplitude_mvpp,
                c.converter_less_w,
                c.converter_based_w,
                ratio_field(c.ratio)
            ));
        }
        s
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            s.push_str(&format!(
                "{:>6} Hz {:>6} mVpp  CL {:.4e} W  CB {:.4e} W  ratio {}\n",
                c.frequency_hz, c.amplitude_mvpp, c.converter_less_w, c.converter_based_w, c.ratio
            ));
        }
        for m in &self.per_frequency {
            let mean = m.mean_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"));
            s.push_str(&format!(
                "{} Hz: mean ratio {mean} ({} cells ∞)\n",
                m.frequency_hz, m.infinite_cells
            ));
        }
        match self.resonance_mean_ratio {
            Some(r) => s.push_str(&format!(
                "resonance ({} Hz) mean ratio: {r:.3}\n",
                self.resonance_hz
            )),
            None => s.push_str(&format!(
                "resonance ({} Hz) mean ratio: n/a\n",
                self.resonance_hz
            )),
        }
        for (f, a) in &self.gaps {
            s.push_str(&format!("gap: {f} Hz {a} mVpp\n"));
        }
        s
    }
}

fn ratio_field(r: Ratio) -> String {
    match r {
        Ratio::Finite(x) => format!("{x}"),
        Ratio::Infinite => "inf".into(),
        Ratio::Undefined => "none".into(),
    }
}

/// Pairs the two topologies of each cell. `resonance_hz` selects the row
/// whose mean ratio is reported separately.
pub fn compare_report(table: &SweepTable, resonance_hz: f64) -> ComparisonReport {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in &table.rows {
        if !keys.contains(&(r.frequency_hz, r.amplitude_mvpp)) {
            keys.push((r.frequency_hz, r.amplitude_mvpp));
        }
    }
    let power = |f: f64, a: f64, kind: TopologyKind| {
        table
            .rows
            .iter()
            .find(|r| r.frequency_hz == f && r.amplitude_mvpp == a && r.topology == kind)
            .and_then(|r| r.avg_power_w)
    };
    let mut cells = Vec::new();
    let mut gaps = Vec::new();
    for &(f, a) in &keys {
        match (
            power(f, a, TopologyKind::ConverterLess),
            power(f, a, TopologyKind::ConverterBased),
        ) {
            (Some(cl), Some(cb)) => cells.push(CellRatio {
                frequency_hz: f,
                amplitude_mvpp: a,
                converter_less_w: cl,
                converter_based_w: cb,
                ratio: Ratio::of(cb, cl),
            }),
            _ => gaps.push((f, a)),
        }
    }
    let mut freqs: Vec<f64> = Vec::new();
    for c in &cells {
        if !freqs.contains(&c.frequency_hz) {
            freqs.push(c.frequency_hz);
        }
    }
    let per_frequency: Vec<FrequencyMean> = freqs
        .iter()
        .map(|&f| {
            let row: Vec<&CellRatio> = cells.iter().filter(|c| c.frequency_hz == f).collect();
            let finite: Vec<f64> = row.iter().filter_map(|c| c.ratio.finite()).collect();
            FrequencyMean {
                frequency_hz: f,
                mean_ratio: (!finite.is_empty())
                    .then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                infinite_cells: row.iter().filter(|c| c.ratio == Ratio::Infinite).count(),
            }
        })
        .collect();
    let resonance_mean_ratio = per_frequency
        .iter()
        .find(|m| m.frequency_hz == resonance_hz)
        .and_then(|m| m.mean_ratio);
    ComparisonReport {
        cells,
        per_frequency,
        resonance_hz,
        resonance_mean_ratio,
        gaps,
    }
}

impl SweepTable {
    /// CSV `frequency_hz,amplitude_mvpp,topology,avg_power_w,best_threshold_v,ratio`.
    /// The ratio column repeats the cell's converter-based/converter-less
    /// ratio on both rows; missing values are empty.
    pub fn to_csv(&self) -> String {
        let report = compare_report(self, f64::NAN);
        let mut s = String::from(
            "frequency_hz,amplitude_mvpp,topology,avg_power_w,best_threshold_v,ratio\n",
        );
        for r in &self.rows {
            let ratio = report
                .cells
                .iter()
                .find(|c| c.frequency_hz == r.frequency_hz && c.amplitude_mvpp == r.amplitude_mvpp)
                .map_or(String::new(), |c| ratio_field(c.ratio));
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.frequency_hz,
                r.amplitude_mvpp,
                r.topology,
                r.avg_power_w.map_or(String::new(), |p| p.to_string()),
                r.best_threshold_v.map_or(String::new(), |v| v.to_string()),
                ratio
            ));
        }
        s
    }

    pub fn get(&self, f: f64, a: f64, kind: TopologyKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.frequency_hz == f && r.amplitude_mvpp == a && r.topology == kind)
    }

    pub fn failed(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}
