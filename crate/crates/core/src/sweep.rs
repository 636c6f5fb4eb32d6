//! Single-point runs, phase diagrams, hysteresis probes and stochastic ensembles.
//!
//! Every run integrates in units of ω₁. Windows are given in units of 1/γ₁ of the
//! parameters actually integrated, so a desk-scaled run (see
//! [`desk_scaled`](crate::model::desk_scaled)) automatically uses a window that
//! is shorter by the scale factor.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_observed, thermal_state_for_trajectory, thermal_state_from_seed, Drift, IntegrationSpec, Method,
    NoiseSpec, OneSphere, SystemState, TwoSphere, C64,
};
use crate::error::{Error, Result};
use crate::io::{config_hash, derive_seed, Cell, CsvTable};
use crate::model::{desk_scaled, nondimensionalize, ModelKind, SystemParams, OMEGA_0_REF};
use crate::stability::{classify_from_tracker, fixed_point_report, ConvergenceTracker, FixedPointReport};
use crate::sync::{ensemble_stats, steady_state, EnsembleStats, SteadyState, SvaStream, DEFAULT_BIN_WIDTH};

/// Default averaging window, units of 1/γ₁.
pub const DEFAULT_WINDOW: [f64; 2] = [9.0, 19.0];

/// Default desk-scale factor for diagrams.
pub const DEFAULT_DESK_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parameter {
    /// Drive amplitude in units of Ω₀.
    #[serde(rename = "Omega")]
    Omega,
    /// Cavity-magnon coupling in units of ω₁.
    #[serde(rename = "g_ma")]
    GMa,
    /// Mechanical frequency difference ω₂ − ω₁ in units of ω₁.
    #[serde(rename = "delta_omega")]
    DeltaOmega,
    /// Common cavity and magnon detuning in units of ω₁.
    #[serde(rename = "Delta")]
    Delta,
}

impl Parameter {
    pub fn apply(self, params: &mut SystemParams, value: f64) {
        let w1 = params.omega_1;
        match self {
            Parameter::Omega => params.drive = params.drive.with_amplitude(value * OMEGA_0_REF),
            Parameter::GMa => params.g_ma = value * w1,
            Parameter::DeltaOmega => params.set_delta_omega(value * w1),
            Parameter::Delta => {
                params.delta_a = value * w1;
                for m in &mut params.magnons {
                    m.delta = value * w1;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log10,
}

/// One diagram axis. With `Log10`, `min`/`max` are decimal exponents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub parameter: Parameter,
    #[serde(default)]
    pub scale: Scale,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::invalid(format!("axis {:?} needs count >= 2", self.parameter)));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(Error::invalid(format!("axis {:?} needs finite min < max", self.parameter)));
        }
        Ok(())
    }

    /// Axis coordinates (exponents for log axes).
    pub fn coordinates(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + step * i as f64).collect()
    }

    /// Parameter value at a coordinate.
    pub fn value(&self, coordinate: f64) -> f64 {
        match self.scale {
            Scale::Linear => coordinate,
            Scale::Log10 => 10f64.powf(coordinate),
        }
    }
}

fn default_window() -> [f64; 2] {
    DEFAULT_WINDOW
}

fn default_desk_scale() -> f64 {
    DEFAULT_DESK_SCALE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
    /// Full-scale parameters in rad/s; axis values overwrite their fields.
    pub base_params: SystemParams,
    /// Averaging window in units of 1/γ₁ of the integrated (desk-scaled) system.
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// γ_j × s and drive × √s before integrating; 1 runs at full scale.
    #[serde(default = "default_desk_scale")]
    pub desk_scale: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.x_axis.validate()?;
        self.y_axis.validate()?;
        if self.x_axis.parameter == self.y_axis.parameter {
            return Err(Error::invalid("x and y axes must sweep different parameters"));
        }
        validate_window(self.window)?;
        if !(self.desk_scale >= 1.0 && self.desk_scale.is_finite()) {
            return Err(Error::invalid("desk_scale must be >= 1"));
        }
        self.base_params.validate()
    }

    /// Parameters integrated at pixel `(ix, iy)`, desk scaling included.
    pub fn pixel_params(&self, ix: usize, iy: usize) -> SystemParams {
        let mut p = self.base_params.clone();
        let (x, y) = (self.x_axis.coordinates()[ix], self.y_axis.coordinates()[iy]);
        self.x_axis.parameter.apply(&mut p, self.x_axis.value(x));
        self.y_axis.parameter.apply(&mut p, self.y_axis.value(y));
        if self.desk_scale == 1.0 {
            p
        } else {
            desk_scaled(&p, self.desk_scale)
        }
    }

    pub fn pixel_seed(&self, ix: usize, iy: usize) -> u64 {
        derive_seed(self.seed, &[ix as u64, iy as u64])
    }

    pub fn config_hash(&self) -> Result<String> {
        config_hash(self)
    }
}

fn validate_window(window: [f64; 2]) -> Result<()> {
    if !(window[0] >= 0.0 && window[0] < window[1] && window[1].is_finite()) {
        return Err(Error::invalid(format!("window must satisfy 0 <= t_lo < t_hi, got {window:?}")));
    }
    Ok(())
}

/// Outcome of one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelResult {
    /// Time average of 𝒫 over the window; `None` when gray or failed.
    pub p_mean: Option<f64>,
    /// Thermal start settled on a stable fixed point.
    pub gray: bool,
    /// Numerical failure description.
    pub failed: Option<String>,
    pub theta_minus_s: Option<f64>,
    pub r_s: Option<f64>,
    /// Mean resultant length of θ_− over the window.
    pub locking: Option<f64>,
    /// See [`SteadyState::amplitude_drift`].
    pub amplitude_drift: Option<f64>,
    /// Smallest largest-real-part over the fixed points, units of ω₁.
    pub eigen_max_real: Option<f64>,
    pub marginal: bool,
}

impl PixelResult {
    fn failure(msg: String, report: Option<&FixedPointReport>) -> Self {
        PixelResult {
            p_mean: None,
            gray: false,
            failed: Some(msg),
            theta_minus_s: None,
            r_s: None,
            locking: None,
            amplitude_drift: None,
            eigen_max_real: report.map(min_max_real),
            marginal: report.is_some_and(|r| r.marginal),
        }
    }

    pub fn completed(&self) -> bool {
        self.failed.is_none()
    }
}

fn min_max_real(report: &FixedPointReport) -> f64 {
    report.eigen_max_real.iter().copied().fold(f64::INFINITY, f64::min)
}

/// A noiseless run from a given state, demodulated over `window` (scaled time).
struct Run {
    stream: SvaStream,
    tracker: ConvergenceTracker,
    final_state: SystemState,
}

fn run_model<const N: usize, D: Drift<N>>(
    drift: &D,
    s: &SystemParams,
    state0: [C64; N],
    window: [f64; 2],
    targets: &[SystemState],
) -> Result<Run>
where
    SystemState: From<[C64; N]>,
{
    let spec = IntegrationSpec::resolving(s, window[1], Method::Rk4);
    let mut stream = SvaStream::new(s, &spec, window)?;
    let mut tracker = ConvergenceTracker::new(targets, spec.steps() as f64 * spec.dt);
    let fin = integrate_observed(drift, state0, &spec, None, &mut (&mut stream, &mut tracker))?;
    Ok(Run { stream, tracker, final_state: SystemState::from(fin) })
}

fn run_from(s: &SystemParams, state0: &SystemState, window: [f64; 2], targets: &[SystemState]) -> Result<Run> {
    let modes = state0.modes();
    match s.model_kind {
        ModelKind::OneSphere => {
            let x0: [C64; 4] = modes.try_into().map_err(|_| state_error(s))?;
            run_model(&OneSphere::new(s)?, s, x0, window, targets)
        }
        ModelKind::TwoSphere => {
            let x0: [C64; 5] = modes.try_into().map_err(|_| state_error(s))?;
            run_model(&TwoSphere::new(s)?, s, x0, window, targets)
        }
    }
}

fn state_error(s: &SystemParams) -> Error {
    Error::ModelMismatch { expected: s.model_kind.name(), found: "state of another model" }
}

fn thermal_start(s: &SystemParams, seed: u64) -> Result<SystemState> {
    Ok(match s.model_kind {
        ModelKind::OneSphere => SystemState::from(thermal_state_from_seed::<4>(s, seed)?),
        ModelKind::TwoSphere => SystemState::from(thermal_state_from_seed::<5>(s, seed)?),
    })
}

fn scaled_window(s: &SystemParams, window: [f64; 2]) -> [f64; 2] {
    [window[0] / s.gamma_1, window[1] / s.gamma_1]
}

fn summarize(run: &Run, window: [f64; 2]) -> Result<SteadyState> {
    steady_state(&run.stream.observables(), window)
}

/// Classifies one parameter point and, in the limit-cycle regime, measures
/// 𝒫, θ_−^s and R^s over `window` (units of 1/γ₁) of a noiseless run from a
/// thermal sample drawn with `seed`. Numerical failures are reported in the
/// result, invalid parameters as errors.
pub fn run_pixel(params: &SystemParams, window: [f64; 2], seed: u64) -> Result<PixelResult> {
    params.validate()?;
    validate_window(window)?;
    let s = nondimensionalize(params);
    let report = match fixed_point_report(&s) {
        Ok(r) => r,
        Err(e) if e.is_validation() => return Err(e),
        Err(e) => return Ok(PixelResult::failure(e.to_string(), None)),
    };
    let w = scaled_window(&s, window);
    let outcome = thermal_start(&s, seed).and_then(|x0| run_from(&s, &x0, w, &report.points));
    let run = match outcome {
        Ok(run) => run,
        Err(e) if e.is_validation() => return Err(e),
        Err(e) => return Ok(PixelResult::failure(e.to_string(), Some(&report))),
    };
    let class = classify_from_tracker(&report, &run.tracker);
    if class.stable {
        return Ok(PixelResult {
            p_mean: None,
            gray: true,
            failed: None,
            theta_minus_s: None,
            r_s: None,
            locking: None,
            amplitude_drift: None,
            eigen_max_real: Some(min_max_real(&report)),
            marginal: report.marginal,
        });
    }
    let ss = summarize(&run, w)?;
    Ok(PixelResult {
        p_mean: Some(ss.p_mean),
        gray: false,
        failed: None,
        theta_minus_s: Some(ss.theta_minus_s),
        r_s: Some(ss.r_s),
        locking: Some(ss.locking),
        amplitude_drift: Some(ss.amplitude_drift),
        eigen_max_real: Some(min_max_real(&report)),
        marginal: report.marginal,
    })
}

/// Assembled diagram. Matrices are indexed `[iy][ix]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub grid: GridSpec,
    pub config_hash: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p_values: Vec<Vec<Option<f64>>>,
    pub gray: Vec<Vec<bool>>,
    pub failed: Vec<Vec<bool>>,
    pub completed: Vec<Vec<bool>>,
    pub theta_minus_s: Vec<Vec<Option<f64>>>,
    pub r_s: Vec<Vec<Option<f64>>>,
    pub locking: Vec<Vec<Option<f64>>>,
    pub amplitude_drift: Vec<Vec<Option<f64>>>,
}

impl PhaseDiagram {
    fn assemble(grid: &GridSpec, hash: String, results: &HashMap<(usize, usize), PixelResult>) -> Self {
        let (nx, ny) = (grid.x_axis.count, grid.y_axis.count);
        let mut d = PhaseDiagram {
            grid: grid.clone(),
            config_hash: hash,
            x: grid.x_axis.coordinates(),
            y: grid.y_axis.coordinates(),
            p_values: vec![vec![None; nx]; ny],
            gray: vec![vec![false; nx]; ny],
            failed: vec![vec![false; nx]; ny],
            completed: vec![vec![false; nx]; ny],
            theta_minus_s: vec![vec![None; nx]; ny],
            r_s: vec![vec![None; nx]; ny],
            locking: vec![vec![None; nx]; ny],
            amplitude_drift: vec![vec![None; nx]; ny],
        };
        for (&(ix, iy), r) in results {
            d.p_values[iy][ix] = r.p_mean;
            d.gray[iy][ix] = r.gray;
            d.failed[iy][ix] = r.failed.is_some();
            d.completed[iy][ix] = r.completed();
            d.theta_minus_s[iy][ix] = r.theta_minus_s;
            d.r_s[iy][ix] = r.r_s;
            d.locking[iy][ix] = r.locking;
            d.amplitude_drift[iy][ix] = r.amplitude_drift;
        }
        d
    }

    /// Rows `(x, y, P, gray, failed, theta_minus_s, R_s, locking, amplitude_drift)`, x fastest.
    pub fn to_csv(&self) -> CsvTable {
        let mut t =
            CsvTable::new(&["x", "y", "P", "gray", "failed", "theta_minus_s", "R_s", "locking", "amplitude_drift"]);
        t.meta("config_hash", &self.config_hash)
            .meta("x_parameter", axis_label(&self.grid.x_axis))
            .meta("y_parameter", axis_label(&self.grid.y_axis))
            .meta("desk_scale", self.grid.desk_scale);
        for (iy, y) in self.y.iter().enumerate() {
            for (ix, x) in self.x.iter().enumerate() {
                t.push(vec![
                    Cell::Float(*x),
                    Cell::Float(*y),
                    self.p_values[iy][ix].into(),
                    self.gray[iy][ix].into(),
                    self.failed[iy][ix].into(),
                    self.theta_minus_s[iy][ix].into(),
                    self.r_s[iy][ix].into(),
                    self.locking[iy][ix].into(),
                    self.amplitude_drift[iy][ix].into(),
                ]);
            }
        }
        t
    }
}

fn axis_label(a: &AxisSpec) -> String {
    let name = serde_json::to_value(a.parameter).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    match a.scale {
        Scale::Linear => name,
        Scale::Log10 => format!("log10({name})"),
    }
}

/// One checkpoint line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointRecord {
    config_hash: String,
    ix: usize,
    iy: usize,
    result: PixelResult,
}

fn load_checkpoint(path: &Path, hash: &str, grid: &GridSpec) -> HashMap<(usize, usize), PixelResult> {
    let mut done = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return done,
        Err(e) => {
            log::warn!("checkpoint {} unreadable ({e}); starting fresh", path.display());
            return done;
        }
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let Ok(line) = line else {
            log::warn!("checkpoint {} unreadable at line {}; keeping earlier records", path.display(), n + 1);
            break;
        };
        match serde_json::from_str::<CheckpointRecord>(&line) {
            Ok(rec) if rec.config_hash == hash && rec.ix < grid.x_axis.count && rec.iy < grid.y_axis.count => {
                done.insert((rec.ix, rec.iy), rec.result);
            }
            Ok(_) => log::warn!("checkpoint line {} belongs to another configuration; ignored", n + 1),
            // a run killed mid-write leaves a truncated last line
            Err(e) => log::warn!("checkpoint line {} skipped: {e}", n + 1),
        }
    }
    done
}

/// Runs every pixel not already in the checkpoint on a pool of `threads`
/// workers (0 = rayon default), appending each finished pixel to the checkpoint.
/// The result does not depend on thread count, order, or interruptions.
pub fn run_diagram(grid: &GridSpec, threads: usize, checkpoint: Option<&Path>) -> Result<PhaseDiagram> {
    grid.validate()?;
    let hash = grid.config_hash()?;
    let mut results = checkpoint.map(|p| load_checkpoint(p, &hash, grid)).unwrap_or_default();
    let todo: Vec<(usize, usize)> = (0..grid.y_axis.count)
        .flat_map(|iy| (0..grid.x_axis.count).map(move |ix| (ix, iy)))
        .filter(|k| !results.contains_key(k))
        .collect();
    let writer = match checkpoint {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let fresh: Vec<((usize, usize), PixelResult)> = pool.install(|| {
        todo.par_iter()
            .map(|&(ix, iy)| -> Result<((usize, usize), PixelResult)> {
                let r = run_pixel(&grid.pixel_params(ix, iy), grid.window, grid.pixel_seed(ix, iy))?;
                if let Some(w) = &writer {
                    let rec = CheckpointRecord { config_hash: hash.clone(), ix, iy, result: r.clone() };
                    let mut line = serde_json::to_string(&rec)?;
                    line.push('\n');
                    let mut f = w.lock().map_err(|_| Error::invalid("checkpoint writer poisoned"))?;
                    f.write_all(line.as_bytes())?;
                    f.flush()?;
                }
                Ok(((ix, iy), r))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    results.extend(fresh);
    Ok(PhaseDiagram::assemble(grid, hash, &results))
}

/// Steady states reached from thermal starts and across parameter switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BistabilityReport {
    pub thermal_a: SteadyState,
    pub thermal_b: SteadyState,
    /// Parameters B continued from the final state under A.
    pub forward: SteadyState,
    /// Parameters A continued from the final state under B.
    pub backward: SteadyState,
}

impl BistabilityReport {
    pub fn p_forward(&self) -> f64 {
        self.forward.p_mean
    }

    pub fn p_backward(&self) -> f64 {
        self.backward.p_mean
    }
}

/// Hysteresis protocol: run A and B from the same thermal sample, then
/// continue each final state under the other parameter set. Each leg lasts
/// `window[1]/γ₁` of its own parameters and is averaged over `window`.
pub fn bistability_probe(
    params_a: &SystemParams,
    params_b: &SystemParams,
    window: [f64; 2],
    seed: u64,
) -> Result<BistabilityReport> {
    validate_window(window)?;
    if params_a.model_kind != params_b.model_kind {
        return Err(Error::ModelMismatch { expected: params_a.model_kind.name(), found: params_b.model_kind.name() });
    }
    let (a, b) = (nondimensionalize(params_a), nondimensionalize(params_b));
    let (wa, wb) = (scaled_window(&a, window), scaled_window(&b, window));
    let x0 = thermal_start(&a, seed)?;
    let run_a = run_from(&a, &x0, wa, &[])?;
    let run_b = run_from(&b, &x0, wb, &[])?;
    let fwd = run_from(&b, &run_a.final_state, wb, &[])?;
    let bwd = run_from(&a, &run_b.final_state, wa, &[])?;
    Ok(BistabilityReport {
        thermal_a: summarize(&run_a, wa)?,
        thermal_b: summarize(&run_b, wb)?,
        forward: summarize(&fwd, wb)?,
        backward: summarize(&bwd, wa)?,
    })
}

/// Final phases of a stochastic ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_trajectories: usize,
    pub seed: u64,
    /// Run length, units of 1/γ₁.
    pub horizon: f64,
    /// Envelope phases at the end, one entry per trajectory.
    pub theta_1: Vec<f64>,
    pub theta_minus: Vec<f64>,
}

impl Ensemble {
    pub fn stats(&self, bin_width: Option<f64>) -> Result<EnsembleStats> {
        ensemble_stats(&self.theta_1, &self.theta_minus, bin_width.unwrap_or(DEFAULT_BIN_WIDTH))
    }
}

fn member<const N: usize, D: Drift<N>>(
    drift: &D,
    s: &SystemParams,
    spec: &IntegrationSpec,
    seed: u64,
    index: u64,
) -> Result<(f64, f64)> {
    let x0: [C64; N] = thermal_state_for_trajectory(s, seed, index)?;
    let noise = NoiseSpec::thermal(s, seed, index);
    let period = std::f64::consts::TAU / s.omega_bar();
    let t_final = spec.steps() as f64 * spec.dt;
    let mut stream = SvaStream::new(s, spec, [t_final - 1.5 * period, t_final + spec.dt])?;
    integrate_observed(drift, x0, spec, Some(&noise), &mut stream)?;
    let obs = stream.observables();
    let last =
        obs.last().ok_or_else(|| Error::InsufficientData("no complete ω̄ period at the end of the run".into()))?;
    Ok((crate::sync::wrap_angle(last.theta_1), crate::sync::wrap_angle(last.theta_minus)))
}

/// `n` stochastic (Heun) trajectories from independent thermal starts, run for
/// `horizon`/γ₁; returns the envelope phases over the final ω̄ period.
/// Trajectory `i` uses noise stream `i` of `seed`, so the result does not
/// depend on the thread count.
pub fn run_ensemble(params: &SystemParams, n: usize, seed: u64, horizon: f64, threads: usize) -> Result<Ensemble> {
    params.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("ensemble horizon must be > 0"));
    }
    let s = nondimensionalize(params);
    let spec = IntegrationSpec::resolving(&s, horizon / s.gamma_1, Method::Heun);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let phases: Vec<(f64, f64)> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| match s.model_kind {
                ModelKind::OneSphere => member(&OneSphere::new(&s)?, &s, &spec, seed, i),
                ModelKind::TwoSphere => member(&TwoSphere::new(&s)?, &s, &spec, seed, i),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (theta_1, theta_minus) = phases.into_iter().unzip();
    Ok(Ensemble { n_trajectories: n, seed, horizon, theta_1, theta_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_params, Drive};

    fn small_grid() -> GridSpec {
        GridSpec {
            x_axis: AxisSpec { parameter: Parameter::Omega, scale: Scale::Log10, min: -3.0, max: -0.4, count: 2 },
            y_axis: AxisSpec { parameter: Parameter::GMa, scale: Scale::Linear, min: 0.7, max: 0.8, count: 2 },
            base_params: default_params(),
            window: [3.0, 6.0],
            seed: 11,
            desk_scale: 1000.0,
        }
    }

    #[test]
    fn axis_values() {
        let a = AxisSpec { parameter: Parameter::Omega, scale: Scale::Log10, min: -1.0, max: 1.0, count: 3 };
        assert_eq!(a.coordinates(), vec![-1.0, 0.0, 1.0]);
        assert!((a.value(-1.0) - 0.1).abs() < 1e-15);
        let bad = AxisSpec { count: 1, ..a };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parameters_apply_in_reference_units() {
        let mut p = default_params();
        Parameter::Omega.apply(&mut p, 0.5);
        assert_eq!(p.drive.amplitude(), 0.5 * OMEGA_0_REF);
        Parameter::GMa.apply(&mut p, 2.0);
        assert_eq!(p.g_ma, 2.0 * p.omega_1);
        Parameter::DeltaOmega.apply(&mut p, 0.02);
        assert!((p.delta_omega() - 0.02 * p.omega_1).abs() < 1e-6);
        Parameter::Delta.apply(&mut p, -0.9);
        assert_eq!(p.delta_a, -0.9 * p.omega_1);
        assert_eq!(p.magnons[0].delta, -0.9 * p.omega_1);
    }

    #[test]
    fn grid_rejects_duplicate_axes() {
        let mut g = small_grid();
        g.y_axis.parameter = Parameter::Omega;
        assert!(g.validate().is_err());
    }

    #[test]
    fn pixel_seeds_differ() {
        let g = small_grid();
        assert_ne!(g.pixel_seed(0, 1), g.pixel_seed(1, 0));
    }

    #[test]
    fn weak_drive_pixel_is_gray_and_repeatable() {
        let mut p = desk_scaled(&default_params(), 1000.0);
        p.drive = Drive::MagnonDrive { amplitude: 1e-3 * OMEGA_0_REF };
        let a = run_pixel(&p, [3.0, 6.0], 4).unwrap();
        assert!(a.gray, "{a:?}");
        assert!(a.p_mean.is_none());
        assert_eq!(a, run_pixel(&p, [3.0, 6.0], 4).unwrap());
    }

    #[test]
    fn diagram_resume_matches_uninterrupted_run() {
        let g = small_grid();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck.jsonl");
        let full = run_diagram(&g, 2, None).unwrap();
        for iy in 0..2 {
            for ix in 0..2 {
                assert!(full.completed[iy][ix]);
                assert!(full.gray[iy][ix] != full.p_values[iy][ix].is_some());
            }
        }
        assert!(full.gray[0][0]);

        // simulate an interruption: keep one record plus a torn line
        let first = run_diagram(&g, 1, Some(&ck)).unwrap();
        assert_eq!(first, full);
        let text = std::fs::read_to_string(&ck).unwrap();
        let one = text.lines().next().unwrap();
        std::fs::write(&ck, format!("{one}\n{{\"config_hash\":\"tor")).unwrap();
        let resumed = run_diagram(&g, 3, Some(&ck)).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn probe_with_identical_parameters_is_symmetric() {
        let p = desk_scaled(&crate::model::OperatingPoint::CaseI.params(), 1000.0);
        let r = bistability_probe(&p, &p, [3.0, 6.0], 2).unwrap();
        assert_eq!(r.forward, r.backward);
        assert_eq!(r.thermal_a, r.thermal_b);
    }
}
