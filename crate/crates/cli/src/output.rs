//! Output files: CSV tables, gnuplot data and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use kehsim_core::engine::{SweepRow, SweepTable};
use kehsim_core::frontend::TopologyKind;
use kehsim_core::Error;
use serde::Serialize;

use crate::config::Config;

/// Collects written files under one output directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `name.csv` and its whitespace-separated `name.dat` twin.
    pub fn write_table(&mut self, name: &str, csv: &str) -> Result<()> {
        self.write(&format!("{name}.csv"), csv)?;
        self.write(&format!("{name}.dat"), &csv_to_dat(csv))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

/// gnuplot-friendly copy of a CSV table: `#`-prefixed header, space
/// separated columns.
pub fn csv_to_dat(csv: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str("# ");
        }
        out.push_str(&line.replace(',', " "));
        out.push('\n');
    }
    out
}

/// Three-column `frequency amplitude power` blocks, one per topology,
/// separated by blank lines for gnuplot's `index`.
pub fn sweep_dat(table: &SweepTable) -> String {
    let mut out = String::new();
    for kind in [TopologyKind::ConverterLess, TopologyKind::ConverterBased] {
        let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.topology == kind).collect();
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("# {kind}\n# frequency_hz amplitude_mvpp avg_power_w\n"));
        for r in rows {
            let p = r.avg_power_w.map_or("NaN".to_string(), |p| p.to_string());
            out.push_str(&format!("{} {} {}\n", r.frequency_hz, r.amplitude_mvpp, p));
        }
        out.push_str("\n\n");
    }
    out
}

/// Threshold sweep of every converter-based cell.
pub fn threshold_sweeps_csv(table: &SweepTable) -> String {
    let mut s = String::from("frequency_hz,amplitude_mvpp,threshold_v,avg_power_w\n");
    for r in &table.rows {
        if let Some(sweep) = &r.sweep {
            for p in &sweep.points {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    r.frequency_hz,
                    r.amplitude_mvpp,
                    p.threshold_v,
                    p.avg_power_w.unwrap_or(f64::NAN)
                ));
            }
        }
    }
    s
}

/// Reads a sweep table written by `SweepTable::to_csv`.
pub fn read_sweep_csv(path: &Path) -> Result<SweepTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("frequency_hz,amplitude_mvpp,topology,avg_power_w,best_threshold_v") {
        return Err(Error::config("--from", format!("{} is not a sweep table", path.display())).into());
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse::<f64>().with_context(|| format!("bad number `{s}`"))?))
        }
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 5 {
            return Err(Error::config("--from", format!("line {}: too few columns", n + 2)).into());
        }
        rows.push(SweepRow {
            frequency_hz: cols[0].parse().with_context(|| format!("line {}", n + 2))?,
            amplitude_mvpp: cols[1].parse().with_context(|| format!("line {}", n + 2))?,
            topology: cols[2].parse()?,
            avg_power_w: opt(cols[3])?,
            best_threshold_v: opt(cols[4])?,
            ledger_residual: None,
            sweep: None,
            error: None,
        });
    }
    Ok(SweepTable { rows })
}

#[derive(Debug, Serialize)]
pub struct ManifestMeta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix_s: u64,
    pub out_dir: String,
    pub outputs: Vec<String>,
    /// True when some grid cells failed and their rows carry no result.
    pub partial: bool,
    pub failed_cells: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<ManifestGrid>,
}

#[derive(Debug, Serialize)]
pub struct ManifestGrid {
    pub frequencies_hz: Vec<f64>,
    pub amplitudes_mvpp: Vec<f64>,
    pub topologies: Vec<TopologyKind>,
    pub sweep_grid_v: Vec<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest: &'a ManifestMeta,
    config: &'a Config,
}

/// Manifest text. The config is fully resolved with any efficiency CSV
/// inlined, so the file can be passed back as `--config`.
pub fn manifest_toml(meta: &ManifestMeta, config: &Config) -> Result<String> {
    let mut resolved = config.clone();
    if resolved.topology.converter.efficiency_csv.is_some() {
        resolved.topology.converter.efficiency = Some(config.efficiency_table()?.points());
        resolved.topology.converter.efficiency_csv = None;
    }
    Ok(toml::to_string(&Manifest {
        manifest: meta,
        config: &resolved,
    })?)
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}
