//! Fixed points, Jacobians and linear stability.
//!
//! One sphere: eliminating `a` and `b_j` leaves a cubic in `y = λ|m|²`,
//!
//! ```text
//! y [(Δ' − y)² + κ'²] = λ Ω²
//! Δ' = Δ_m − g_ma² Δ_a/(Δ_a²+κ_a²),   κ' = κ_m + g_ma² κ_a/(Δ_a²+κ_a²)
//! ```
//!
//! whose non-negative roots are isolated on monotone intervals and bisected.
//! Two spheres: the same elimination leaves two real unknowns
//! `y_j = λ_j|m_j|²`, solved by damped Newton from a grid of starts.
//!
//! Jacobians are assembled from the Wirtinger derivatives `A = ∂f/∂z`,
//! `B = ∂f/∂z*` and mapped to interleaved real coordinates
//! `(Re z₀, Im z₀, Re z₁, …)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_observed, thermal_state_from_seed, Drift, IntegrationSpec, Method, Observer, OneSphere, SystemState,
    TwoSphere, C64,
};
use crate::error::{Error, Result};
use crate::model::{nondimensionalize, ModelKind, SystemParams};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Eigenvalue real parts within this margin of zero (units of ω₁) are marginal.
pub const STABILITY_MARGIN: f64 = 1e-6;

/// Mode shift coefficient λ_j = 2g_j²ω_j/(ω_j²+γ_j²) of one oscillator.
fn shift_coefficient(params: &SystemParams, j: usize) -> f64 {
    let (g, w, y) = (params.couplings()[j], params.omegas()[j], params.gammas()[j]);
    2.0 * g * g * w / (w * w + y * y)
}

/// Static mechanical amplitude β_j = −i g_j x/(iω_j + γ_j) for magnon occupation x.
fn static_mechanics(params: &SystemParams, j: usize, x: f64) -> C64 {
    let (g, w, y) = (params.couplings()[j], params.omegas()[j], params.gammas()[j]);
    -I * (g * x) / C64::new(y, w)
}

/// Effective magnon detuning and damping after eliminating the cavity.
fn dressed_magnon(params: &SystemParams) -> (f64, f64) {
    let den = params.delta_a * params.delta_a + params.kappa_a * params.kappa_a;
    let g2 = params.g_ma * params.g_ma;
    let mag = params.magnons[0];
    (mag.delta - g2 * params.delta_a / den, mag.kappa + g2 * params.kappa_a / den)
}

/// Real roots of a continuous function on `[lo, hi]` where it is monotone.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Non-negative roots `y` of `y[(d − y)² + k²] = c`, ascending.
pub fn cubic_roots(d: f64, k: f64, c: f64) -> Vec<f64> {
    if c <= 0.0 {
        return vec![0.0];
    }
    let f = |y: f64| y * ((d - y) * (d - y) + k * k) - c;
    // f(y) ≥ y k² − c, so every root lies below c/k²
    let y_max = c / (k * k);
    // critical points of f: 3y² − 4dy + d² + k² = 0
    let disc = d * d - 3.0 * k * k;
    let mut cuts = vec![0.0];
    if disc > 0.0 {
        for s in [-1.0, 1.0] {
            let yc = (2.0 * d + s * disc.sqrt()) / 3.0;
            if yc > 0.0 && yc < y_max {
                cuts.push(yc);
            }
        }
    }
    cuts.push(y_max);
    let mut roots: Vec<f64> = cuts.windows(2).filter_map(|w| bisect(f, w[0], w[1])).collect();
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    roots
}

fn one_sphere_points(params: &SystemParams) -> Vec<[C64; 4]> {
    let omega = params.drive.amplitude();
    let lambda = params.static_shift_coefficient();
    let (dp, kp) = dressed_magnon(params);
    let ys = if lambda > 0.0 { cubic_roots(dp, kp, lambda * omega * omega) } else { vec![0.0] };
    ys.into_iter()
        .map(|y| {
            let m = C64::new(omega, 0.0) / C64::new(kp, dp - y);
            let a = -I * params.g_ma * m / C64::new(params.kappa_a, params.delta_a);
            let x = m.norm_sqr();
            [a, m, static_mechanics(params, 0, x), static_mechanics(params, 1, x)]
        })
        .collect()
}

/// Two-sphere stationary amplitudes for given magnon shifts `y_j`.
fn two_sphere_state(params: &SystemParams, y: [f64; 2]) -> [C64; 5] {
    let chi: [C64; 2] = std::array::from_fn(|j| {
        let m = params.magnons[j];
        C64::new(m.kappa, m.delta - y[j]).inv()
    });
    let g2 = params.g_ma * params.g_ma;
    let a =
        C64::new(params.drive.amplitude(), 0.0) / (C64::new(params.kappa_a, params.delta_a) + (chi[0] + chi[1]) * g2);
    let m: [C64; 2] = std::array::from_fn(|j| -I * params.g_ma * chi[j] * a);
    [a, m[0], m[1], static_mechanics(params, 0, m[0].norm_sqr()), static_mechanics(params, 1, m[1].norm_sqr())]
}

fn two_sphere_points(params: &SystemParams) -> Result<Vec<[C64; 5]>> {
    let lam = [shift_coefficient(params, 0), shift_coefficient(params, 1)];
    let residual = |y: [f64; 2]| -> [f64; 2] {
        let s = two_sphere_state(params, y);
        [y[0] - lam[0] * s[1].norm_sqr(), y[1] - lam[1] * s[2].norm_sqr()]
    };
    let omega = params.drive.amplitude();
    // κ_j|m_j|² ≤ Ω_a²/(4κ_a) bounds every stationary shift
    let y_hi: [f64; 2] =
        std::array::from_fn(|j| lam[j] * omega * omega / (4.0 * params.kappa_a * params.magnons[j].kappa));
    if y_hi.iter().all(|&v| v == 0.0) {
        return Ok(vec![two_sphere_state(params, [0.0, 0.0])]);
    }
    let scale = y_hi[0].max(y_hi[1]);
    let tol = 1e-13 * scale;
    let grid = 7;
    let mut found: Vec<[f64; 2]> = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..grid {
        for k in 0..grid {
            let mut y = [y_hi[0] * i as f64 / (grid - 1) as f64, y_hi[1] * k as f64 / (grid - 1) as f64];
            let mut r = residual(y);
            let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
            for _ in 0..100 {
                if norm(r) <= tol {
                    break;
                }
                // finite-difference Jacobian of the 2×2 residual
                let mut jac = [[0.0; 2]; 2];
                for c in 0..2 {
                    let h = 1e-7 * y[c].abs().max(1e-3 * scale).max(f64::MIN_POSITIVE);
                    let mut yp = y;
                    let mut ym = y;
                    yp[c] += h;
                    ym[c] -= h;
                    let (rp, rm) = (residual(yp), residual(ym));
                    jac[0][c] = (rp[0] - rm[0]) / (2.0 * h);
                    jac[1][c] = (rp[1] - rm[1]) / (2.0 * h);
                }
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                if det == 0.0 || !det.is_finite() {
                    break;
                }
                let step = [(jac[1][1] * r[0] - jac[0][1] * r[1]) / det, (jac[0][0] * r[1] - jac[1][0] * r[0]) / det];
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let trial = [(y[0] - t * step[0]).max(0.0), (y[1] - t * step[1]).max(0.0)];
                    let rt = residual(trial);
                    if norm(rt) < norm(r) {
                        y = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if norm(r) <= tol {
                if !found.iter().any(|f| (f[0] - y[0]).abs().max((f[1] - y[1]).abs()) <= 1e-8 * scale) {
                    found.push(y);
                }
            } else {
                worst = worst.max(norm(r) / scale);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Convergence {
            what: "two-sphere fixed-point Newton",
            iterations: grid * grid,
            residual: worst,
        });
    }
    found.sort_by(|a, b| (a[0] + a[1]).total_cmp(&(b[0] + b[1])));
    Ok(found.into_iter().map(|y| two_sphere_state(params, y)).collect())
}

/// Newton polish on the full real system with the analytic Jacobian.
fn polish(params: &SystemParams, state: &SystemState) -> Result<SystemState> {
    let mut s = state.clone();
    let mut r = drift_residual(params, &s)?;
    for _ in 0..3 {
        let jac = jacobian(&s, params)?;
        let f = DVector::from_vec(drift_real(params, &s)?);
        let Some(step) = jac.lu().solve(&f) else { break };
        let x: Vec<f64> = s.to_real().iter().zip(step.iter()).map(|(x, d)| x - d).collect();
        let trial = state_from_real(params.model_kind, &x);
        let rt = drift_residual(params, &trial)?;
        if rt < r {
            s = trial;
            r = rt;
        } else {
            break;
        }
    }
    Ok(s)
}

fn state_from_real(kind: ModelKind, x: &[f64]) -> SystemState {
    let z = |k: usize| C64::new(x[2 * k], x[2 * k + 1]);
    match kind {
        ModelKind::OneSphere => SystemState::from([z(0), z(1), z(2), z(3)]),
        ModelKind::TwoSphere => SystemState::from([z(0), z(1), z(2), z(3), z(4)]),
    }
}

fn drift_real(params: &SystemParams, state: &SystemState) -> Result<Vec<f64>> {
    let f: Vec<C64> = match (params.model_kind, state) {
        (ModelKind::OneSphere, SystemState::OneSphere { a, m, b1, b2 }) => {
            OneSphere::new(params)?.eval(&[*a, *m, *b1, *b2]).to_vec()
        }
        (ModelKind::TwoSphere, SystemState::TwoSphere { a, m1, m2, b1, b2 }) => {
            TwoSphere::new(params)?.eval(&[*a, *m1, *m2, *b1, *b2]).to_vec()
        }
        _ => return Err(state_mismatch(params, state)),
    };
    Ok(f.iter().flat_map(|z| [z.re, z.im]).collect())
}

fn state_mismatch(params: &SystemParams, state: &SystemState) -> Error {
    let found = match state {
        SystemState::OneSphere { .. } => "OneSphere",
        SystemState::TwoSphere { .. } => "TwoSphere",
    };
    Error::ModelMismatch { expected: params.model_kind.name(), found }
}

/// Drift norm at `state`, relative to `max(1, drive amplitude)`.
pub fn drift_residual(params: &SystemParams, state: &SystemState) -> Result<f64> {
    let f = drift_real(params, state)?;
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(norm / params.drive.amplitude().max(1.0))
}

/// All fixed points of the noiseless equations.
pub fn fixed_points(params: &SystemParams) -> Result<Vec<SystemState>> {
    params.validate()?;
    let raw: Vec<SystemState> = match params.model_kind {
        ModelKind::OneSphere => one_sphere_points(params).into_iter().map(SystemState::from).collect(),
        ModelKind::TwoSphere => two_sphere_points(params)?.into_iter().map(SystemState::from).collect(),
    };
    raw.iter().map(|s| polish(params, s)).collect()
}

/// Wirtinger derivatives `(∂f/∂z, ∂f/∂z*)` of the drift.
fn wirtinger(state: &SystemState, params: &SystemParams) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let n = params.model_kind.n_modes();
    let mut a = DMatrix::<C64>::zeros(n, n);
    let mut b = DMatrix::<C64>::zeros(n, n);
    let [g1, g2] = params.couplings();
    let g = [g1, g2];
    let gma = params.g_ma;
    let cav = -C64::new(params.kappa_a, params.delta_a);
    let mech: [C64; 2] = std::array::from_fn(|j| -C64::new(params.gammas()[j], params.omegas()[j]));
    match (params.model_kind, state) {
        (ModelKind::OneSphere, SystemState::OneSphere { m, b1, b2, .. }) => {
            let mag = params.magnons[0];
            let bs = [*b1, *b2];
            let shift: f64 = (0..2).map(|j| 2.0 * g[j] * bs[j].re).sum();
            a[(0, 0)] = cav;
            a[(0, 1)] = -I * gma;
            a[(1, 1)] = -C64::new(mag.kappa, mag.delta) - I * shift;
            a[(1, 0)] = -I * gma;
            for j in 0..2 {
                a[(1, 2 + j)] = -I * g[j] * m;
                b[(1, 2 + j)] = -I * g[j] * m;
                a[(2 + j, 2 + j)] = mech[j];
                a[(2 + j, 1)] = -I * g[j] * m.conj();
                b[(2 + j, 1)] = -I * g[j] * m;
            }
        }
        (ModelKind::TwoSphere, SystemState::TwoSphere { m1, m2, b1, b2, .. }) => {
            let ms = [*m1, *m2];
            let bs = [*b1, *b2];
            a[(0, 0)] = cav;
            for j in 0..2 {
                let mag = params.magnons[j];
                let (mi, bi) = (1 + j, 3 + j);
                a[(0, mi)] = -I * gma;
                a[(mi, 0)] = -I * gma;
                a[(mi, mi)] = -C64::new(mag.kappa, mag.delta) - I * (2.0 * g[j] * bs[j].re);
                a[(mi, bi)] = -I * g[j] * ms[j];
                b[(mi, bi)] = -I * g[j] * ms[j];
                a[(bi, bi)] = mech[j];
                a[(bi, mi)] = -I * g[j] * ms[j].conj();
                b[(bi, mi)] = -I * g[j] * ms[j];
            }
        }
        _ => return Err(state_mismatch(params, state)),
    }
    Ok((a, b))
}

/// Real Jacobian of the drift in interleaved `(Re, Im)` coordinates
/// (8×8 for one sphere, 10×10 for two).
pub fn jacobian(state: &SystemState, params: &SystemParams) -> Result<DMatrix<f64>> {
    let (a, b) = wirtinger(state, params)?;
    let n = a.nrows();
    let mut j = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let (p, q) = (a[(r, c)] + b[(r, c)], a[(r, c)] - b[(r, c)]);
            j[(2 * r, 2 * c)] = p.re;
            j[(2 * r, 2 * c + 1)] = -q.im;
            j[(2 * r + 1, 2 * c)] = p.im;
            j[(2 * r + 1, 2 * c + 1)] = q.re;
        }
    }
    Ok(j)
}

pub fn eigenvalues(jac: &DMatrix<f64>) -> Vec<C64> {
    let mut ev: Vec<C64> = jac.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    ev
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub points: Vec<SystemState>,
    /// Relative drift residual of each point.
    pub residuals: Vec<f64>,
    /// Jacobian eigenvalues per point, largest real part first (units of the parameters).
    pub eigenvalues: Vec<Vec<C64>>,
    pub eigen_max_real: Vec<f64>,
    /// Some point has every real part below −margin.
    pub any_stable: bool,
    /// Some point has its largest real part within ±margin of zero.
    pub marginal: bool,
}

impl FixedPointReport {
    pub fn stable_points(&self) -> impl Iterator<Item = &SystemState> {
        self.points.iter().zip(&self.eigen_max_real).filter(|(_, &e)| e < 0.0).map(|(p, _)| p)
    }
}

pub fn fixed_point_report(params: &SystemParams) -> Result<FixedPointReport> {
    let points = fixed_points(params)?;
    let margin = STABILITY_MARGIN * params.omega_1;
    let mut report = FixedPointReport {
        points: Vec::new(),
        residuals: Vec::new(),
        eigenvalues: Vec::new(),
        eigen_max_real: Vec::new(),
        any_stable: false,
        marginal: false,
    };
    for p in points {
        let ev = eigenvalues(&jacobian(&p, params)?);
        let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        report.any_stable |= max_re < -margin;
        report.marginal |= max_re.abs() <= margin;
        report.residuals.push(drift_residual(params, &p)?);
        report.eigenvalues.push(ev);
        report.eigen_max_real.push(max_re);
        report.points.push(p);
    }
    if report.marginal {
        log::warn!("marginal fixed point: a Jacobian eigenvalue lies within {margin:e} of the imaginary axis");
    }
    Ok(report)
}

/// Tracks the distance to candidate fixed points over the last tenth of a run,
/// split into two halves.
#[derive(Clone, Debug)]
pub struct ConvergenceTracker {
    targets: Vec<Vec<C64>>,
    t_end: f64,
    /// Per target: largest distance in the early and late half of the last tenth.
    pub early: Vec<f64>,
    pub late: Vec<f64>,
}

impl ConvergenceTracker {
    pub fn new(targets: &[SystemState], t_end: f64) -> Self {
        ConvergenceTracker {
            targets: targets.iter().map(|s| s.modes()).collect(),
            t_end,
            early: vec![0.0; targets.len()],
            late: vec![0.0; targets.len()],
        }
    }

    /// Half-window length.
    pub fn span(&self) -> f64 {
        0.05 * self.t_end
    }

    /// Whether the run settles on target `k`, given its slowest decay rate
    /// `sigma > 0`: the late distance must shrink by at least half the predicted
    /// factor `e^{−σ·span}`, or already sit at rounding level.
    pub fn converged(&self, k: usize, sigma: f64) -> bool {
        let scale: f64 = 1.0 + self.targets[k].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if self.late[k] <= 1e-9 * scale {
            return true;
        }
        self.late[k] <= self.early[k] * (-0.5 * sigma * self.span()).exp() && self.late[k] < self.early[k]
    }
}

impl<const N: usize> Observer<N> for ConvergenceTracker {
    fn observe(&mut self, t: f64, s: &[C64; N]) {
        if t < 0.9 * self.t_end {
            return;
        }
        let late = t >= 0.95 * self.t_end;
        for (k, target) in self.targets.iter().enumerate() {
            let d = target.iter().zip(s.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let slot = if late { &mut self.late[k] } else { &mut self.early[k] };
            *slot = slot.max(d);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityClass {
    /// The thermal-start trajectory settles on a linearly stable fixed point.
    pub stable: bool,
    /// Smallest largest-real-part over all fixed points (units of the parameters).
    pub eigen_max_real: f64,
    pub any_stable_point: bool,
    /// `None` when no trajectory was needed (no stable point).
    pub trajectory_converged: Option<bool>,
    pub marginal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub seed: u64,
    /// Integration horizon in units of 1/γ₁.
    pub horizon: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions { seed: 0, horizon: 19.0 }
    }
}

/// Decides from a fixed-point report and a tracker fed with a thermal-start run.
pub fn classify_from_tracker(report: &FixedPointReport, tracker: &ConvergenceTracker) -> StabilityClass {
    let mut converged = false;
    for (k, &max_re) in report.eigen_max_real.iter().enumerate() {
        if max_re < 0.0 && !report.eigenvalues[k].is_empty() && tracker.converged(k, -max_re) {
            converged = true;
        }
    }
    let stable = report.any_stable && converged;
    StabilityClass {
        stable,
        eigen_max_real: min_max_real(report),
        any_stable_point: report.any_stable,
        trajectory_converged: Some(converged),
        marginal: report.marginal,
    }
}

fn min_max_real(report: &FixedPointReport) -> f64 {
    report.eigen_max_real.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Hybrid criterion: stable iff some fixed point is linearly stable and a
/// noiseless run from a seeded thermal sample converges to one.
pub fn classify_stability(params: &SystemParams, opts: &StabilityOptions) -> Result<StabilityClass> {
    let report = fixed_point_report(params)?;
    if !report.any_stable {
        return Ok(StabilityClass {
            stable: false,
            eigen_max_real: min_max_real(&report),
            any_stable_point: false,
            trajectory_converged: None,
            marginal: report.marginal,
        });
    }
    let s = nondimensionalize(params);
    let scaled_report = FixedPointReport {
        eigen_max_real: report.eigen_max_real.iter().map(|e| e / params.omega_1).collect(),
        ..report.clone()
    };
    let t_end = opts.horizon / s.gamma_1;
    let spec = IntegrationSpec::resolving(&s, t_end, Method::Rk4);
    let mut tracker = ConvergenceTracker::new(&report.points, spec.steps() as f64 * spec.dt);
    match s.model_kind {
        ModelKind::OneSphere => {
            let x0: [C64; 4] = thermal_state_from_seed(&s, opts.seed)?;
            integrate_observed(&OneSphere::new(&s)?, x0, &spec, None, &mut tracker)?;
        }
        ModelKind::TwoSphere => {
            let x0: [C64; 5] = thermal_state_from_seed(&s, opts.seed)?;
            integrate_observed(&TwoSphere::new(&s)?, x0, &spec, None, &mut tracker)?;
        }
    }
    let mut class = classify_from_tracker(&scaled_report, &tracker);
    class.eigen_max_real = min_max_real(&report);
    Ok(class)
}

/// Bisection for the point in `[lo, hi]` where `stable(x)` flips; requires
/// opposite flags at the ends.
pub fn bisect_boundary(mut lo: f64, mut hi: f64, tol: f64, mut stable: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    let s_lo = stable(lo)?;
    if stable(hi)? == s_lo {
        return Err(Error::invalid(format!("no stability flip between {lo} and {hi}")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
