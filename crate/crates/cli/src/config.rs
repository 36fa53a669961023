//! TOML configuration: one section per simulator part, dotted-key
//! overrides, and conversion to engine types.

use std::path::{Path, PathBuf};

use kehsim_core::engine::{GridSpec, SimConfig, ThresholdControl};
use kehsim_core::frontend::{
    ConverterParams, EfficiencyPoint, EfficiencyTable, QuiescentScaling, RectifierParams,
    Topology, TopologyKind,
};
use kehsim_core::mppt::{default_sweep_grid, StudyStart};
use kehsim_core::{CapLoadState, Error, PiezoModel, VibrationProfile};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: VibrationProfile,
    #[serde(default)]
    pub transducer: PiezoModel,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub storage: CapLoadState,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mppt: MpptSection,
    #[serde(default)]
    pub iv: IvSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub vd_v: f64,
    pub converter: ConverterConfig,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyKind::ConverterBased,
            vd_v: RectifierParams::default().vd_v,
            converter: ConverterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterConfig {
    pub v_threshold_v: f64,
    pub quiescent_w: f64,
    pub quiescent_scaling: QuiescentScaling,
    pub mpp_sample_interval_s: f64,
    pub mpp_sample_duration_s: f64,
    pub input_averaging_s: f64,
    /// Inline efficiency points; ignored when `efficiency_csv` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<Vec<EfficiencyPoint>>,
    /// CSV file `v_in_v,i_in_a,eta`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency_csv: Option<PathBuf>,
}

impl Default for ConverterConfig {
    fn default() -> Self {
        let p = ConverterParams::default();
        Self {
            v_threshold_v: p.v_threshold_v,
            quiescent_w: p.quiescent_w,
            quiescent_scaling: p.quiescent_scaling,
            mpp_sample_interval_s: p.mpp_sample_interval_s,
            mpp_sample_duration_s: p.mpp_sample_duration_s,
            input_averaging_s: p.input_averaging_s,
            efficiency: None,
            efficiency_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transient_skip_s: Option<f64>,
    pub seed: u64,
    pub trace_rate_hz: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt_s: d.dt_s,
            transient_skip_s: None,
            seed: d.seed,
            trace_rate_hz: d.trace_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub frequencies_hz: Vec<f64>,
    pub amplitudes_mvpp: Vec<f64>,
    pub topologies: Vec<TopologyKind>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            frequencies_hz: g.frequencies_hz,
            amplitudes_mvpp: g.amplitudes_mvpp,
            topologies: g.topologies,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPolicy {
    /// Hold `topology.converter.v_threshold_v`.
    Fixed,
    FractionalOcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartState {
    Rest,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpptSection {
    /// Threshold control used by `simulate`.
    pub policy: ControlPolicy,
    pub k_fraction: f64,
    pub sweep_grid_v: Vec<f64>,
    pub f_t_grid_hz: Vec<f64>,
    pub study_start: StartState,
}

impl Default for MpptSection {
    fn default() -> Self {
        Self {
            policy: ControlPolicy::Fixed,
            k_fraction: 0.65,
            sweep_grid_v: default_sweep_grid(),
            f_t_grid_hz: vec![0.0625, 0.5, 5.0, 50.0, 500.0],
            study_start: StartState::Rest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvSection {
    pub settle_cycles: usize,
    /// Steps up to the estimated open-circuit voltage when `v_grid` is unset.
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_grid: Option<Vec<f64>>,
}

impl Default for IvSection {
    fn default() -> Self {
        Self {
            settle_cycles: 60,
            points: 60,
            v_grid: None,
        }
    }
}

/// Converts a TOML value into a `Config`, naming the dotted key path of
/// the first offending value.
pub fn from_value(mut value: toml::Value) -> Result<Config, Error> {
    if let Some(t) = value.as_table_mut() {
        // a manifest carries its own metadata next to the resolved config
        if t.contains_key("manifest") {
            t.remove("manifest");
            if let Some(toml::Value::Table(cfg)) = t.remove("config") {
                value = toml::Value::Table(cfg);
            }
        }
    }
    let text = toml::to_string(&value)
        .map_err(|e| Error::config("<config>", format!("cannot re-encode: {e}")))?;
    let de = toml::Deserializer::new(&text);
    serde_path_to_error::deserialize::<_, Config>(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        let key = match missing_field(&msg) {
            Some(field) if path == "." || path.is_empty() => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        Error::config(key, msg)
    })
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Applies `KEY=VALUE` overrides with dotted keys. Values are read as TOML
/// literals, falling back to plain strings.
pub fn apply_overrides(value: &mut toml::Value, overrides: &[String]) -> Result<(), Error> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| {
            Error::config(o.clone(), "override must look like KEY=VALUE")
        })?;
        let key = key.trim();
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(key, "malformed key"));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let mut node = &mut *value;
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(parts[..i].join("."), "is not a table"))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
    }
    Ok(())
}

/// Reads a config file (or starts empty), applies overrides and resolves
/// it. Relative CSV paths are taken relative to the config file.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, Error> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::config("--config", format!("cannot read {}: {e}", p.display()))
            })?;
            toml::from_str::<toml::Value>(&text)
                .map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::Table::new()),
    };
    apply_overrides(&mut value, overrides)?;
    let mut cfg = from_value(value)?;
    if let (Some(csv), Some(p)) = (&cfg.topology.converter.efficiency_csv, path) {
        if csv.is_relative() {
            if let Some(dir) = p.parent() {
                cfg.topology.converter.efficiency_csv = Some(dir.join(csv));
            }
        }
    }
    Ok(cfg)
}

impl Config {
    pub fn efficiency_table(&self) -> Result<EfficiencyTable, Error> {
        let c = &self.topology.converter;
        match (&c.efficiency_csv, &c.efficiency) {
            (Some(path), _) => EfficiencyTable::from_csv_file(path),
            (None, Some(points)) => EfficiencyTable::from_points(points),
            (None, None) => Ok(EfficiencyTable::default()),
        }
    }

    pub fn rectifier(&self) -> RectifierParams {
        RectifierParams {
            vd_v: self.topology.vd_v,
        }
    }

    pub fn converter_params(&self) -> Result<ConverterParams, Error> {
        let c = &self.topology.converter;
        Ok(ConverterParams {
            v_threshold_v: c.v_threshold_v,
            quiescent_w: c.quiescent_w,
            quiescent_scaling: c.quiescent_scaling,
            efficiency: self.efficiency_table()?,
            mpp_sample_interval_s: c.mpp_sample_interval_s,
            mpp_sample_duration_s: c.mpp_sample_duration_s,
            input_averaging_s: c.input_averaging_s,
        })
    }

    pub fn topology(&self) -> Result<Topology, Error> {
        Ok(match self.topology.kind {
            TopologyKind::ConverterLess => Topology::ConverterLess {
                rectifier: self.rectifier(),
            },
            TopologyKind::ConverterBased => Topology::ConverterBased {
                rectifier: self.rectifier(),
                converter: self.converter_params()?,
            },
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig, Error> {
        let control = match self.mppt.policy {
            ControlPolicy::Fixed => ThresholdControl::Fixed,
            ControlPolicy::FractionalOcv => ThresholdControl::FractionalOcv {
                k_fraction: self.mppt.k_fraction,
            },
        };
        let cfg = SimConfig {
            profile: self.profile,
            model: self.transducer,
            topology: self.topology()?,
            cap_load: CapLoadState {
                activations: 0,
                e_delivered_j: 0.0,
                ..self.storage
            },
            dt_s: self.sim.dt_s,
            transient_skip_s: self.sim.transient_skip_s,
            seed: self.sim.seed,
            control,
            trace_rate_hz: self.sim.trace_rate_hz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Base configuration for grid runs: the converter is always attached
    /// so converter-based cells have parameters.
    pub fn grid_base(&self) -> Result<SimConfig, Error> {
        let mut cfg = self.sim_config()?;
        cfg.topology = Topology::ConverterBased {
            rectifier: self.rectifier(),
            converter: self.converter_params()?,
        };
        cfg.control = ThresholdControl::Fixed;
        Ok(cfg)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            frequencies_hz: self.grid.frequencies_hz.clone(),
            amplitudes_mvpp: self.grid.amplitudes_mvpp.clone(),
            topologies: self.grid.topologies.clone(),
            sweep_grid_v: self.mppt.sweep_grid_v.clone(),
        }
    }

    pub fn study_start(&self) -> StudyStart {
        match self.mppt.study_start {
            StartState::Rest => StudyStart::Rest,
            StartState::Settled => StudyStart::Settled,
        }
    }

    /// Fully resolved configuration as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, Error> {
        from_value(toml::from_str(text).unwrap())
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse("[profile]\namplitude_mvpp = 1000\nfrequency_hz = 25\n").unwrap();
        assert_eq!(c.transducer, PiezoModel::default());
        assert_eq!(c.storage.v_on_v, 3.38);
        assert_eq!(c.topology.kind, TopologyKind::ConverterBased);
        assert_eq!(c.grid.frequencies_hz.len(), 5);
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse("[profile]\namplitude_mvpp = 1000\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "profile.frequency_hz"),
            other => panic!("{other:?}"),
        }
        let err = parse("").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "profile"));
    }

    #[test]
    fn wrong_type_is_named() {
        let err =
            parse("[profile]\namplitude_mvpp = 1\nfrequency_hz = 25\n[storage]\nc_farad = \"big\"\n")
                .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "storage.c_farad"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse("[profile]\namplitude_mvpp = 1\nfrequency_hz = 25\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_set_nested_values() {
        let mut v: toml::Value = toml::from_str("[profile]\namplitude_mvpp = 1000\n").unwrap();
        apply_overrides(
            &mut v,
            &[
                "profile.frequency_hz=30".into(),
                "topology.kind=ConverterLess".into(),
                "storage.v_on_v = 3.5".into(),
            ],
        )
        .unwrap();
        let c = from_value(v).unwrap();
        assert_eq!(c.profile.frequency_hz, 30.0);
        assert_eq!(c.topology.kind, TopologyKind::ConverterLess);
        assert_eq!(c.storage.v_on_v, 3.5);
        let mut v = toml::Value::Table(toml::Table::new());
        assert!(apply_overrides(&mut v, &["novalue".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = parse("[profile]\namplitude_mvpp = 600\nfrequency_hz = 20\n").unwrap();
        c.topology.converter.efficiency = Some(EfficiencyTable::default().points());
        c.sim.transient_skip_s = Some(0.1 + 0.2);
        let back = parse(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn manifest_wrapper_is_accepted() {
        let c = parse("[profile]\namplitude_mvpp = 600\nfrequency_hz = 20\n").unwrap();
        let mut wrapper = toml::Table::new();
        wrapper.insert("config".into(), toml::Value::try_from(&c).unwrap());
        let text = format!(
            "[manifest]\ntool = \"kehsim\"\n\n{}",
            toml::to_string(&wrapper).unwrap()
        );
        assert_eq!(parse(&text).unwrap(), c);
    }
}
