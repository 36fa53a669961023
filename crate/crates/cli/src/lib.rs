//! Command-line front end of the kehsim harvesting simulator.

pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use kehsim_core::engine::{compare_report, run_grid, run_sim};
use kehsim_core::frontend::Topology;
use kehsim_core::mppt::{find_mpp, static_sweep, tracking_study};
use kehsim_core::Error;
use serde::Serialize;

use crate::config::Config;
use crate::output::{ManifestGrid, ManifestMeta, OutDir};

#[derive(Debug, Parser)]
#[command(name = "kehsim", version, about = "Piezoelectric vibration harvester simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file (a previous run's manifest.toml also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Dotted-key override, e.g. `topology.kind=ConverterLess`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Integration step in seconds (same as `sim.dt_s`).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Simulated seconds per run (same as `profile.duration_s`).
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Worker threads for grid and sweep runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its trace.
    Simulate,
    /// Emulate a source-meter sweep of the rectified IV characteristic.
    IvCurve,
    /// Harvested power against MPP tracking rate.
    MpptStudy {
        /// Also sweep the converter threshold for the configured profile.
        #[arg(long)]
        with_sweep: bool,
    },
    /// Run the frequency × amplitude × topology grid.
    Sweep,
    /// Compare converter-based against converter-less power.
    Compare {
        /// Use an existing sweep.csv instead of running the grid.
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::IvCurve => "iv-curve",
            Command::MpptStudy { .. } => "mppt-study",
            Command::Sweep => "sweep",
            Command::Compare { .. } => "compare",
        }
    }
}

/// Process exit code for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

impl Cli {
    pub fn load_config(&self) -> Result<Config, Error> {
        let mut overrides = self.overrides.clone();
        if let Some(dt) = self.dt {
            overrides.push(format!("sim.dt_s={dt:?}"));
        }
        if let Some(d) = self.duration {
            overrides.push(format!("profile.duration_s={d:?}"));
        }
        config::load(self.config.as_deref(), &overrides)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::config("--jobs", "must be >= 1").into());
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = cli.load_config()?;
    let mut out = OutDir::create(&cli.out_dir)?;
    let mut meta = ManifestMeta {
        tool: "kehsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        created_unix_s: output::now_unix(),
        out_dir: cli.out_dir.display().to_string(),
        outputs: Vec::new(),
        partial: false,
        failed_cells: Vec::new(),
        warnings: Vec::new(),
        grid: None,
    };
    match &cli.command {
        Command::Simulate => simulate(&cfg, &mut out, &mut meta)?,
        Command::IvCurve => iv_curve(&cfg, &mut out)?,
        Command::MpptStudy { with_sweep } => mppt_study(&cfg, *with_sweep, &mut out)?,
        Command::Sweep => {
            let table = sweep(&cfg, &mut out, &mut meta)?;
            eprintln!("{} rows written to {}", table.rows.len(), out.root().display());
        }
        Command::Compare { from } => {
            let table = match from {
                Some(path) => output::read_sweep_csv(path)?,
                None => sweep(&cfg, &mut out, &mut meta)?,
            };
            let report = compare_report(&table, cfg.transducer.f0_hz);
            out.write("comparison.csv", &report.to_csv())?;
            out.write("comparison.txt", &report.render())?;
            let mut dat = String::from("# frequency_hz amplitude_mvpp ratio\n");
            for c in &report.cells {
                if let Some(r) = c.ratio.finite() {
                    dat.push_str(&format!("{} {} {}\n", c.frequency_hz, c.amplitude_mvpp, r));
                }
            }
            out.write("ratio.dat", &dat)?;
            if !report.gaps.is_empty() {
                meta.partial = true;
            }
            print!("{}", report.render());
        }
    }
    for w in &meta.warnings {
        eprintln!("warning: {w}");
    }
    meta.outputs = out.written().to_vec();
    meta.outputs.push("manifest.toml".into());
    let text = output::manifest_toml(&meta, &cfg)?;
    out.write("manifest.toml", &text)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    summary: &'a kehsim_core::engine::SimSummary,
    ledger: &'a kehsim_core::engine::Ledger,
    window: &'a kehsim_core::engine::Ledger,
    max_relative_residual: f64,
    warnings: &'a [String],
}

fn simulate(cfg: &Config, out: &mut OutDir, meta: &mut ManifestMeta) -> Result<()> {
    let sim = cfg.sim_config()?;
    let trace = run_sim(&sim)?;
    out.write_table("trace", &trace.to_csv())?;
    out.write("events.csv", &trace.events_csv())?;
    if !trace.ocv_samples.is_empty() {
        let mut s = String::from("time_s,voc_v,threshold_v\n");
        for o in &trace.ocv_samples {
            s.push_str(&format!("{},{},{}\n", o.time_s, o.voc_v, o.threshold_v));
        }
        out.write("ocv_samples.csv", &s)?;
    }
    let summary = trace.summary();
    let file = SummaryFile {
        summary,
        ledger: &trace.ledger,
        window: &trace.window,
        max_relative_residual: trace.ledger.max_relative_residual(),
        warnings: &trace.warnings,
    };
    out.write("summary.toml", &toml::to_string(&file)?)?;
    meta.warnings.extend(trace.warnings.iter().cloned());
    println!(
        "{}: avg harvested power {:e} W, {} activations, ledger residual {:.2e}",
        sim.topology.kind(),
        summary.avg_harvested_power_w,
        summary.activations,
        trace.ledger.max_relative_residual()
    );
    Ok(())
}

fn iv_curve(cfg: &Config, out: &mut OutDir) -> Result<()> {
    let rect = cfg.rectifier();
    let grid = match &cfg.iv.v_grid {
        Some(g) => g.clone(),
        None => cfg
            .transducer
            .adaptive_iv_grid(&cfg.profile, &rect, cfg.sim.dt_s, cfg.iv.points)?,
    };
    let curve = cfg.transducer.measure_iv_curve(
        &cfg.profile,
        &rect,
        &grid,
        cfg.iv.settle_cycles,
        cfg.sim.dt_s,
    )?;
    out.write_table("iv_curve", &curve.to_csv())?;
    let mpp = find_mpp(&curve);
    let frac = if curve.voc_v > 0.0 {
        mpp.v_mpp_v / curve.voc_v
    } else {
        f64::NAN
    };
    out.write(
        "mpp.csv",
        &format!(
            "v_mpp_v,i_mpp_a,p_mpp_w,voc_v,v_mpp_over_voc\n{},{},{},{},{}\n",
            mpp.v_mpp_v, mpp.i_mpp_a, mpp.p_mpp_w, mpp.voc_v, frac
        ),
    )?;
    println!(
        "MPP {} V / {} A = {:e} W, voc {} V, v_mpp/voc {:.3}",
        mpp.v_mpp_v, mpp.i_mpp_a, mpp.p_mpp_w, mpp.voc_v, frac
    );
    Ok(())
}

fn mppt_study(cfg: &Config, with_sweep: bool, out: &mut OutDir) -> Result<()> {
    let study = tracking_study(
        &cfg.transducer,
        &cfg.profile,
        &cfg.rectifier(),
        &cfg.mppt.f_t_grid_hz,
        cfg.sim.dt_s,
        cfg.study_start(),
    )?;
    out.write_table("tracking", &study.to_csv())?;
    for (k, row) in study.rows.iter().enumerate() {
        out.write(&format!("mpp_trace_ft{}.csv", row.f_t_hz), &study.trace_csv(k))?;
        println!("f_T {} Hz: {:e} W", row.f_t_hz, row.avg_power_w);
    }
    if with_sweep {
        let mut base = cfg.sim_config()?;
        if base.topology.converter().is_none() {
            base.topology = Topology::ConverterBased {
                rectifier: cfg.rectifier(),
                converter: cfg.converter_params()?,
            };
        }
        base.control = kehsim_core::engine::ThresholdControl::Fixed;
        let sweep = static_sweep(&base, &cfg.mppt.sweep_grid_v)?;
        out.write_table("static_sweep", &sweep.to_csv())?;
        if let Some((v, p)) = sweep.best {
            println!("best threshold {v} V: {p:e} W");
        }
    }
    Ok(())
}

fn sweep(
    cfg: &Config,
    out: &mut OutDir,
    meta: &mut ManifestMeta,
) -> Result<kehsim_core::engine::SweepTable> {
    let base = cfg.grid_base()?;
    let spec = cfg.grid_spec();
    let table = run_grid(&base, &spec)?;
    out.write("sweep.csv", &table.to_csv())?;
    out.write("sweep.dat", &output::sweep_dat(&table))?;
    out.write_table("threshold_sweeps", &output::threshold_sweeps_csv(&table))?;
    for r in table.failed() {
        meta.partial = true;
        meta.failed_cells.push(format!(
            "{} Hz {} mVpp {}: {}",
            r.frequency_hz,
            r.amplitude_mvpp,
            r.topology,
            r.error.as_deref().unwrap_or_default()
        ));
    }
    meta.grid = Some(ManifestGrid {
        frequencies_hz: spec.frequencies_hz.clone(),
        amplitudes_mvpp: spec.amplitudes_mvpp.clone(),
        topologies: spec.topologies.clone(),
        sweep_grid_v: spec.sweep_grid_v.clone(),
    });
    Ok(table)
}
