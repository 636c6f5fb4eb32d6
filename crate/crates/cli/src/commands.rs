//! One function per subcommand. Each reads the resolved [`RunConfig`] and
//! writes its files through [`Output`], which stamps every file with the
//! config hash.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use magsync::dynamics::{
    integrate_observed, thermal_state_from_seed, Drift, Observer, OneSphere, TwoSphere, SAMPLES_PER_PERIOD,
};
use magsync::io::{Cell, CsvTable, Document};
use magsync::stability::StabilityOptions;
use magsync::sync::{steady_state, SvaStream};
use magsync::{
    classify_stability, constraint_solve, desk_scaled, f_curve, find_sync_targets, fixed_point_report, fs_locus,
    nondimensionalize, pi_phase_optimum, run_diagram, run_ensemble, IntegrationSpec, Method, ModelKind, NoiseSpec,
    SystemParams, C64,
};
use serde::Serialize;

use crate::config::{InitialState, RunConfig};

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    hash: String,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Output { dir: dir.to_owned(), command, hash: cfg.hash()? };
        out.json("config.json", "config", cfg)?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&self, name: &str, mut table: CsvTable) -> Result<()> {
        let mut head = vec![
            format!("magsync: {} {}", self.command, env!("CARGO_PKG_VERSION")),
            format!("config_hash: {}", self.hash),
        ];
        head.append(&mut table.comments);
        table.comments = head;
        table.write(&self.path(name))?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn json<T: Serialize + serde::de::DeserializeOwned + Clone>(&self, name: &str, kind: &str, data: &T) -> Result<()> {
        Document::new(kind, &self.hash, data.clone()).write(&self.path(name))?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }
}

fn mode_names(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::OneSphere => &["a", "m", "b1", "b2"],
        ModelKind::TwoSphere => &["a", "m1", "m2", "b1", "b2"],
    }
}

/// Keeps every `every`-th observed sample.
struct Decimated<const N: usize> {
    every: usize,
    seen: usize,
    rows: Vec<(f64, [C64; N])>,
}

impl<const N: usize> Observer<N> for Decimated<N> {
    fn observe(&mut self, t: f64, state: &[C64; N]) {
        if self.seen % self.every == 0 {
            self.rows.push((t, *state));
        }
        self.seen += 1;
    }
}

fn simulate_with<const N: usize, D: Drift<N>>(
    drift: &D,
    s: &SystemParams,
    cfg: &RunConfig,
    out: &Output,
) -> Result<()> {
    let ic = &cfg.integration;
    let t_end = ic.t_end / s.gamma_1;
    let window = [ic.window[0] / s.gamma_1, ic.window[1] / s.gamma_1];
    let spec = IntegrationSpec::resolving(s, t_end, ic.method);
    let noise = (ic.method == Method::Heun).then(|| NoiseSpec::thermal(s, cfg.seed, 0));
    let x0: [C64; N] = match ic.initial {
        InitialState::Thermal => thermal_state_from_seed(s, cfg.seed)?,
        InitialState::Zero => [C64::default(); N],
    };
    let mut rec = Decimated { every: ic.record_periods.max(1) * SAMPLES_PER_PERIOD, seen: 0, rows: Vec::new() };
    let mut stream = SvaStream::new(s, &spec, [0.0, f64::INFINITY])?;
    integrate_observed(drift, x0, &spec, noise.as_ref(), &mut (&mut rec, &mut stream))?;

    let names = mode_names(s.model_kind);
    let mut columns = vec!["t".to_owned()];
    for n in names {
        columns.push(format!("{n}_re"));
        columns.push(format!("{n}_im"));
    }
    let mut traj = CsvTable::new(&columns.iter().map(String::as_str).collect::<Vec<_>>());
    traj.meta("time_unit", "1/omega_1").meta("omega_1_rad_per_s", s.rate_unit);
    for (t, state) in &rec.rows {
        let mut row = vec![Cell::Float(*t)];
        row.extend(state.iter().flat_map(|z| [Cell::Float(z.re), Cell::Float(z.im)]));
        traj.push(row);
    }
    out.csv("trajectory.csv", traj)?;

    let obs = stream.observables();
    let mut table = CsvTable::new(&["t", "I1", "I2", "theta_1", "theta_2", "theta_minus", "R", "P"]);
    table.meta("time_unit", "1/omega_1");
    for o in &obs {
        table.push(vec![
            o.t.into(),
            o.i1.into(),
            o.i2.into(),
            o.theta_1.into(),
            o.theta_2.into(),
            o.theta_minus.into(),
            o.r.into(),
            o.p.into(),
        ]);
    }
    out.csv("sync_observables.csv", table)?;

    match steady_state(&obs, window) {
        Ok(ss) => out.json("steady_state.json", "steady_state", &ss)?,
        Err(e) => log::warn!("no steady-state summary: {e}"),
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Output) -> Result<()> {
    let p = cfg.physical_params()?;
    let s = nondimensionalize(&desk_scaled(&p, cfg.integration.desk_scale));
    match s.model_kind {
        ModelKind::OneSphere => simulate_with(&OneSphere::new(&s)?, &s, cfg, out),
        ModelKind::TwoSphere => simulate_with(&TwoSphere::new(&s)?, &s, cfg, out),
    }
}

pub fn ensemble(cfg: &RunConfig, out: &Output, threads: usize) -> Result<()> {
    let ec = &cfg.ensemble;
    let p = desk_scaled(&cfg.physical_params()?, ec.desk_scale);
    let ens = run_ensemble(&p, ec.n_trajectories, cfg.seed, ec.horizon, threads)?;
    let stats = ens.stats(Some(ec.bin_width))?;

    let mut phases = CsvTable::new(&["theta_1", "theta_minus"]);
    for (a, b) in ens.theta_1.iter().zip(&ens.theta_minus) {
        phases.push(vec![(*a).into(), (*b).into()]);
    }
    out.csv("ensemble_phases.csv", phases)?;

    let mut hist = CsvTable::new(&["center", "density_theta_1", "density_theta_minus"]);
    hist.meta("bin_width", stats.histogram_theta1.bin_width).meta("n", stats.n);
    let (h1, hm) = (&stats.histogram_theta1, &stats.histogram_theta_minus);
    for k in 0..h1.centers.len() {
        hist.push(vec![h1.centers[k].into(), h1.density[k].into(), hm.density[k].into()]);
    }
    out.csv("histograms.csv", hist)?;
    out.json("ensemble_stats.json", "ensemble_stats", &stats)
}

fn f_table(curve: &[magsync::FCurvePoint]) -> CsvTable {
    let mut t = CsvTable::new(&["b_tilde", "F_re", "F_im", "converged", "iterations", "beta_tilde_s"]);
    t.meta("rate_unit", "omega_1");
    for pt in curve {
        t.push(vec![
            pt.b_tilde.into(),
            pt.f.map(|f| f.re).into(),
            pt.f.map(|f| f.im).into(),
            pt.converged.into(),
            pt.iterations.into(),
            pt.beta_tilde_s.into(),
        ]);
    }
    t
}

pub fn sideband(cfg: &RunConfig, out: &Output) -> Result<()> {
    let s = nondimensionalize(&cfg.physical_params()?);
    let curve = f_curve(&s, &cfg.sideband.grid()?, &cfg.sideband.options)?;
    out.csv("f_curve.csv", f_table(&curve))
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
struct ConstraintSummary {
    roots_at_zero: Vec<f64>,
    roots_at_pi: Vec<f64>,
    r_star: f64,
    theta_max: f64,
    #[serde(rename = "P_pi_opt")]
    p_pi_opt: f64,
}

pub fn constraint(cfg: &RunConfig, out: &Output) -> Result<()> {
    let p = cfg.physical_params()?;
    let n = cfg.constraint.n_theta.max(2);
    let mut t = CsvTable::new(&["theta_minus", "R_low", "R_high"]);
    for k in 0..n {
        let th = -PI + 2.0 * PI * (k + 1) as f64 / n as f64;
        let roots = constraint_solve(th, &p);
        t.push(vec![th.into(), roots.first().copied().into(), roots.get(1).copied().into()]);
    }
    out.csv("constraint_roots.csv", t)?;
    let opt = pi_phase_optimum(&p)?;
    let summary = ConstraintSummary {
        roots_at_zero: constraint_solve(0.0, &p),
        roots_at_pi: constraint_solve(PI, &p),
        r_star: opt.r_star,
        theta_max: opt.theta_max,
        p_pi_opt: opt.p_pi_opt,
    };
    out.json("constraint.json", "constraint", &summary)
}

pub fn modulate(cfg: &RunConfig, out: &Output) -> Result<()> {
    let s = nondimensionalize(&cfg.physical_params()?);
    let locus = fs_locus(&s, cfg.locus.p_threshold, cfg.locus.n_theta)?;
    let curve = f_curve(&s, &cfg.sideband.grid()?, &cfg.sideband.options)?;
    let targets = find_sync_targets(&s, &curve, &locus, &cfg.sideband.options)?;

    let mut t = CsvTable::new(&["branch", "kind", "theta_minus", "R", "F_re", "F_im"]);
    t.meta("P_threshold", locus.p_threshold).meta("rate_unit", "omega_1");
    for (k, (kind, branch)) in locus.branches().enumerate() {
        let label = match kind {
            magsync::sync::LocusKind::ZeroPhase => "zero_phase",
            magsync::sync::LocusKind::PiPhase => "pi_phase",
        };
        for pt in branch {
            t.push(vec![k.into(), label.into(), pt.theta_minus.into(), pt.r.into(), pt.f.re.into(), pt.f.im.into()]);
        }
    }
    out.csv("fs_locus.csv", t)?;
    out.csv("f_curve.csv", f_table(&curve))?;
    out.json("intersections.json", "sync_targets", &targets)
}

pub fn stability(cfg: &RunConfig, out: &Output) -> Result<()> {
    let s = nondimensionalize(&cfg.physical_params()?);
    let report = fixed_point_report(&s)?;
    out.json("fixed_points.json", "fixed_point_report", &report)?;
    if cfg.stability.trajectory_check {
        let opts = StabilityOptions { seed: cfg.seed, horizon: cfg.stability.horizon };
        out.json("stability.json", "stability_class", &classify_stability(&s, &opts)?)?;
    }
    Ok(())
}

pub fn diagram(cfg: &RunConfig, out: &Output, threads: usize) -> Result<()> {
    let grid = cfg.grid_spec()?;
    let d = run_diagram(&grid, threads, Some(&out.path("diagram.checkpoint.jsonl")))?;
    let mut table = d.to_csv();
    for c in &mut table.comments {
        if let Some(h) = c.strip_prefix("config_hash: ") {
            *c = format!("grid_hash: {h}");
        }
    }
    out.csv("diagram.csv", table)?;
    out.json("diagram.json", "phase_diagram", &d)
}
