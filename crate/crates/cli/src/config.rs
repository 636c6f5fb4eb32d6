//! Run configuration: one JSON document with a block per command, every block
//! optional. `--set key=value` edits the document before it is parsed, so
//! overrides go through the same validation as the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use magsync::sideband::SidebandOptions;
use magsync::sweep::{AxisSpec, GridSpec, Parameter, Scale, DEFAULT_DESK_SCALE, DEFAULT_WINDOW};
use magsync::{default_params, default_two_sphere_params, HzParams, Method, OperatingPoint, SystemParams};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    OneSphere,
    TwoSphere,
}

impl Preset {
    fn params(self) -> SystemParams {
        match self {
            Preset::OneSphere => default_params(),
            Preset::TwoSphere => default_two_sphere_params(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Thermal,
    Zero,
}

/// Deterministic (`Rk4`) or thermal-noise (`Heun`) single run.
/// Times are in units of 1/γ₁ of the integrated parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub t_end: f64,
    pub window: [f64; 2],
    pub method: Method,
    pub desk_scale: f64,
    pub initial: InitialState,
    /// Trajectory rows are written once every this many ω̄ periods.
    pub record_periods: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            t_end: DEFAULT_WINDOW[1],
            window: DEFAULT_WINDOW,
            method: Method::Rk4,
            desk_scale: 1.0,
            initial: InitialState::Thermal,
            record_periods: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    /// Run length, units of 1/γ₁ of the integrated parameters.
    pub horizon: f64,
    pub desk_scale: f64,
    /// Histogram bin width [rad].
    pub bin_width: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_trajectories: 500,
            horizon: DEFAULT_WINDOW[1],
            desk_scale: DEFAULT_DESK_SCALE,
            bin_width: magsync::sync::DEFAULT_BIN_WIDTH,
        }
    }
}

/// `|B̃|` grid in units of ω₁ plus the solver options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SidebandConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub count: usize,
    pub options: SidebandOptions,
}

impl Default for SidebandConfig {
    fn default() -> Self {
        SidebandConfig { b_min: 0.02, b_max: 4.0, count: 200, options: SidebandOptions::default() }
    }
}

impl SidebandConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.b_min > 0.0 && self.b_max > self.b_min && self.count >= 2) {
            bail!(invalid("sideband grid needs 0 < b_min < b_max and count >= 2"));
        }
        let step = (self.b_max - self.b_min) / (self.count - 1) as f64;
        Ok((0..self.count).map(|k| self.b_min + step * k as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// θ_− samples over (−π, π].
    pub n_theta: usize,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig { n_theta: 720 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocusConfig {
    #[serde(rename = "P_threshold")]
    pub p_threshold: f64,
    pub n_theta: usize,
}

impl Default for LocusConfig {
    fn default() -> Self {
        LocusConfig { p_threshold: 0.9, n_theta: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Also integrate from a thermal start and report whether it settles.
    pub trajectory_check: bool,
    /// Trajectory length, units of 1/γ₁.
    pub horizon: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { trajectory_check: false, horizon: DEFAULT_WINDOW[1] }
    }
}

/// Phase-diagram axes; the base parameters are `params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
    pub window: [f64; 2],
    pub desk_scale: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_axis: AxisSpec { parameter: Parameter::Omega, scale: Scale::Log10, min: -1.5, max: 0.0, count: 101 },
            y_axis: AxisSpec { parameter: Parameter::GMa, scale: Scale::Linear, min: 0.1, max: 1.0, count: 101 },
            window: DEFAULT_WINDOW,
            desk_scale: DEFAULT_DESK_SCALE,
        }
    }
}

/// Fully resolved configuration. Serializing it gives the document the config
/// hash is taken from. Files may omit any field; [`RunConfig::load`] fills
/// the gaps from [`RunConfig::defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Rates in Hz. Missing fields come from the preset.
    pub params: HzParams,
    /// "i", "ii", "iii" or "iv": overrides the drive amplitude and g_ma.
    pub operating_point: Option<String>,
    pub seed: u64,
    pub integration: IntegrationConfig,
    pub ensemble: EnsembleConfig,
    pub sideband: SidebandConfig,
    pub constraint: ConstraintConfig,
    pub locus: LocusConfig,
    pub stability: StabilityConfig,
    pub grid: GridConfig,
}

pub fn invalid(msg: impl Into<String>) -> magsync::Error {
    magsync::Error::InvalidArgument(msg.into())
}

impl RunConfig {
    /// Every block at its default, parameters from `preset`.
    pub fn defaults(preset: Preset) -> Self {
        RunConfig {
            preset,
            params: HzParams::from_angular(&preset.params()),
            operating_point: None,
            seed: 0,
            integration: IntegrationConfig::default(),
            ensemble: EnsembleConfig::default(),
            sideband: SidebandConfig::default(),
            constraint: ConstraintConfig::default(),
            locus: LocusConfig::default(),
            stability: StabilityConfig::default(),
            grid: GridConfig::default(),
        }
    }

    /// Defaults, overlaid with the file, overlaid with `--set` and `--seed`.
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !file.is_object() {
            bail!(invalid("configuration must be a JSON object"));
        }
        let mut preset = file.get("preset").cloned();
        for s in sets {
            if let Some(raw) = s.strip_prefix("preset=") {
                preset = Some(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned())));
            }
        }
        let preset: Preset = match preset {
            Some(v) => serde_json::from_value(v).map_err(|e| invalid(format!("preset: {e}")))?,
            None => Preset::default(),
        };
        let mut doc = serde_json::to_value(Self::defaults(preset))?;
        merge(&mut doc, file);
        for s in sets {
            apply_override(&mut doc, s)?;
        }
        if let Some(seed) = seed {
            doc["seed"] = seed.into();
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| invalid(format!("configuration: {e}")))?;
        cfg.physical_params()?;
        Ok(cfg)
    }

    pub fn operating_point(&self) -> Result<Option<OperatingPoint>> {
        let Some(label) = &self.operating_point else { return Ok(None) };
        OperatingPoint::ALL
            .into_iter()
            .find(|op| op.label() == label)
            .map(Some)
            .ok_or_else(|| invalid(format!("unknown operating point {label:?}; expected i, ii, iii or iv")).into())
    }

    /// Full-scale parameters in rad/s, validated.
    pub fn physical_params(&self) -> Result<SystemParams> {
        let mut p = self.params.clone().into_angular();
        if let Some(op) = self.operating_point()? {
            let (log_omega, g_ma) = op.coordinates();
            Parameter::Omega.apply(&mut p, 10f64.powf(log_omega));
            Parameter::GMa.apply(&mut p, g_ma);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = &self.grid;
        let spec = GridSpec {
            x_axis: g.x_axis,
            y_axis: g.y_axis,
            base_params: self.physical_params()?,
            window: g.window,
            seed: self.seed,
            desk_scale: g.desk_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(magsync::io::config_hash(self)?)
    }
}

/// Recursive object merge; anything that is not an object on both sides is replaced.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.0.c=value`; the value is parsed as JSON and falls back to a string.
fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| invalid(format!("--set expects key=value, got {assignment:?}")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!(invalid(format!("--set: malformed key {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut slot = doc;
    for key in path.split('.') {
        slot = match slot {
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| invalid(format!("--set {path}: {key:?} is not an index")))?;
                let len = items.len();
                items.get_mut(i).ok_or_else(|| invalid(format!("--set {path}: index {i} out of range ({len})")))?
            }
            Value::Null => {
                *slot = Value::Object(Map::new());
                slot.as_object_mut().expect("just created").entry(key).or_insert(Value::Null)
            }
            Value::Object(map) => map.entry(key).or_insert(Value::Null),
            _ => bail!(invalid(format!("--set {path}: {key:?} is inside a scalar"))),
        };
    }
    *slot = value;
    Ok(())
}
