//! Langevin equations of motion and fixed-step integrators.
//!
//! States are fixed-size arrays of complex c-number amplitudes in the frame
//! rotating at the drive frequency:
//!
//! * one sphere: `[a, m, b1, b2]`
//! * two spheres: `[a, m1, m2, b1, b2]`
//!
//! Deterministic runs use classical RK4. Noisy runs use the stochastic Heun
//! scheme, which is strong order 1 for the additive noise of these models.
//! Noise increments come from ChaCha8 keyed by `(seed, stream)`: the stream is
//! the trajectory index and the position in the stream is the step counter, so
//! every trajectory is reproducible independently of scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, SystemParams};

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Amplitude above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Deterministic right-hand side of an `N`-mode complex system.
pub trait Drift<const N: usize>: Sync {
    fn eval(&self, state: &[C64; N]) -> [C64; N];

    /// Energy decay rate κ_O of every mode; sets the noise amplitude √(2κ_O).
    fn decay_rates(&self) -> [f64; N];
}

/// Models that carry two mechanical modes (and know where they live in the state).
pub trait MechanicalLayout<const N: usize>: Drift<N> {
    const MECHANICAL: [usize; 2];

    fn mechanical(state: &[C64; N]) -> [C64; 2] {
        [state[Self::MECHANICAL[0]], state[Self::MECHANICAL[1]]]
    }

    /// Total magnon occupation Σ|m|² (the magnetostrictive force on the mechanics).
    fn magnon_occupation(state: &[C64; N]) -> f64;

    /// Reference frequency ω̄ of the mechanical pair, in the drift's units.
    fn omega_bar(&self) -> f64;
}

/// Noiseless one-sphere equations:
///
/// ```text
/// ȧ  = −(iΔ_a+κ_a)a − i g_ma m
/// ṁ  = −(iΔ_m+κ_m)m − i g_ma a − Σⱼ i gⱼ m (bⱼ* + bⱼ) + Ω
/// ḃⱼ = −(iωⱼ+γⱼ)bⱼ − i gⱼ |m|²
/// ```
#[derive(Clone, Debug)]
pub struct OneSphere {
    pub(crate) cavity: C64,
    pub(crate) magnon: C64,
    pub(crate) mech: [C64; 2],
    pub(crate) g: [f64; 2],
    pub(crate) g_ma: f64,
    pub(crate) drive: f64,
    rates: [f64; 4],
    omega_bar: f64,
}

impl OneSphere {
    pub fn new(params: &SystemParams) -> Result<Self> {
        if params.model_kind != ModelKind::OneSphere {
            return Err(Error::ModelMismatch { expected: "OneSphere", found: params.model_kind.name() });
        }
        params.validate()?;
        let mag = params.magnons[0];
        Ok(OneSphere {
            cavity: -C64::new(params.kappa_a, params.delta_a),
            magnon: -C64::new(mag.kappa, mag.delta),
            mech: [-C64::new(params.gamma_1, params.omega_1), -C64::new(params.gamma_2, params.omega_2)],
            g: params.couplings(),
            g_ma: params.g_ma,
            drive: params.drive.amplitude(),
            rates: [params.kappa_a, mag.kappa, params.gamma_1, params.gamma_2],
            omega_bar: params.omega_bar(),
        })
    }
}

impl Drift<4> for OneSphere {
    #[inline]
    fn eval(&self, s: &[C64; 4]) -> [C64; 4] {
        let [a, m, b1, b2] = *s;
        let shift = 2.0 * (self.g[0] * b1.re + self.g[1] * b2.re);
        let m2 = m.norm_sqr();
        let da = self.cavity * a - I * (self.g_ma * m);
        let dm = self.magnon * m - I * (self.g_ma * a) - I * (shift * m) + self.drive;
        let db1 = self.mech[0] * b1 - I * (self.g[0] * m2);
        let db2 = self.mech[1] * b2 - I * (self.g[1] * m2);
        [da, dm, db1, db2]
    }

    fn decay_rates(&self) -> [f64; 4] {
        self.rates
    }
}

impl MechanicalLayout<4> for OneSphere {
    const MECHANICAL: [usize; 2] = [2, 3];

    fn magnon_occupation(s: &[C64; 4]) -> f64 {
        s[1].norm_sqr()
    }

    fn omega_bar(&self) -> f64 {
        self.omega_bar
    }
}

/// Noiseless two-sphere equations:
///
/// ```text
/// ȧ   = −(iΔ_a+κ_a)a − i g_ma (m₁+m₂) + Ω_a
/// ṁⱼ  = −(iΔⱼ+κⱼ)mⱼ − i g_ma a − i gⱼ mⱼ (bⱼ* + bⱼ)
/// ḃⱼ  = −(iωⱼ+γⱼ)bⱼ − i gⱼ |mⱼ|²
/// ```
#[derive(Clone, Debug)]
pub struct TwoSphere {
    pub(crate) cavity: C64,
    pub(crate) magnon: [C64; 2],
    pub(crate) mech: [C64; 2],
    pub(crate) g: [f64; 2],
    pub(crate) g_ma: f64,
    pub(crate) drive: f64,
    rates: [f64; 5],
    omega_bar: f64,
}

impl TwoSphere {
    pub fn new(params: &SystemParams) -> Result<Self> {
        if params.model_kind != ModelKind::TwoSphere {
            return Err(Error::ModelMismatch { expected: "TwoSphere", found: params.model_kind.name() });
        }
        params.validate()?;
        let [m1, m2] = [params.magnons[0], params.magnons[1]];
        Ok(TwoSphere {
            cavity: -C64::new(params.kappa_a, params.delta_a),
            magnon: [-C64::new(m1.kappa, m1.delta), -C64::new(m2.kappa, m2.delta)],
            mech: [-C64::new(params.gamma_1, params.omega_1), -C64::new(params.gamma_2, params.omega_2)],
            g: params.couplings(),
            g_ma: params.g_ma,
            drive: params.drive.amplitude(),
            rates: [params.kappa_a, m1.kappa, m2.kappa, params.gamma_1, params.gamma_2],
            omega_bar: params.omega_bar(),
        })
    }
}

impl Drift<5> for TwoSphere {
    #[inline]
    fn eval(&self, s: &[C64; 5]) -> [C64; 5] {
        let [a, m1, m2, b1, b2] = *s;
        let da = self.cavity * a - I * (self.g_ma * (m1 + m2)) + self.drive;
        let dm1 = self.magnon[0] * m1 - I * (self.g_ma * a) - I * (2.0 * self.g[0] * b1.re * m1);
        let dm2 = self.magnon[1] * m2 - I * (self.g_ma * a) - I * (2.0 * self.g[1] * b2.re * m2);
        let db1 = self.mech[0] * b1 - I * (self.g[0] * m1.norm_sqr());
        let db2 = self.mech[1] * b2 - I * (self.g[1] * m2.norm_sqr());
        [da, dm1, dm2, db1, db2]
    }

    fn decay_rates(&self) -> [f64; 5] {
        self.rates
    }
}

impl MechanicalLayout<5> for TwoSphere {
    const MECHANICAL: [usize; 2] = [3, 4];

    fn magnon_occupation(s: &[C64; 5]) -> f64 {
        s[1].norm_sqr() + s[2].norm_sqr()
    }

    fn omega_bar(&self) -> f64 {
        self.omega_bar
    }
}

/// Single damped rotating mode ḃ = −(iω+γ)b. Analytic test system.
#[derive(Clone, Copy, Debug)]
pub struct DampedMode {
    pub omega: f64,
    pub gamma: f64,
}

impl DampedMode {
    pub fn exact(&self, b0: C64, t: f64) -> C64 {
        b0 * (-C64::new(self.gamma, self.omega) * t).exp()
    }
}

impl Drift<1> for DampedMode {
    fn eval(&self, s: &[C64; 1]) -> [C64; 1] {
        [-C64::new(self.gamma, self.omega) * s[0]]
    }

    fn decay_rates(&self) -> [f64; 1] {
        [self.gamma]
    }
}

/// Ornstein–Uhlenbeck test mode ȧ = −κa (+ √(2κ) a_in when integrated with noise).
#[derive(Clone, Copy, Debug)]
pub struct OuMode {
    pub kappa: f64,
}

impl Drift<1> for OuMode {
    fn eval(&self, s: &[C64; 1]) -> [C64; 1] {
        [-self.kappa * s[0]]
    }

    fn decay_rates(&self) -> [f64; 1] {
        [self.kappa]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rk4,
    Heun,
}

/// Fixed-step integration request. Times are in the units of the drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub t_end: f64,
    pub dt: f64,
    pub sample_stride: usize,
    pub method: Method,
}

/// Samples stored per period 2π/ω̄ by [`IntegrationSpec::resolving`].
pub const SAMPLES_PER_PERIOD: usize = 20;

impl IntegrationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::invalid(format!("t_end ({}) must be >= dt ({})", self.t_end, self.dt)));
        }
        if self.sample_stride == 0 {
            return Err(Error::invalid("sample_stride must be >= 1"));
        }
        Ok(())
    }

    /// Number of steps; the final time `steps·dt` is ≥ `t_end`.
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    /// RK4 spec whose step divides the ω̄ period exactly: `dt ≤ 0.02/ω₂`,
    /// `SAMPLES_PER_PERIOD` stored samples per period.
    pub fn resolving(params: &SystemParams, t_end: f64, method: Method) -> Self {
        let period = std::f64::consts::TAU / params.omega_bar();
        let dt_max = 0.02 / params.omega_2;
        let stride = (period / (SAMPLES_PER_PERIOD as f64 * dt_max)).ceil().max(1.0) as usize;
        IntegrationSpec { t_end, dt: period / (SAMPLES_PER_PERIOD * stride) as f64, sample_stride: stride, method }
    }

    /// Steps per period of ω̄ when the spec was built by [`Self::resolving`].
    pub fn steps_per_period(&self, omega_bar: f64) -> Option<usize> {
        let n = std::f64::consts::TAU / (omega_bar * self.dt);
        let r = n.round();
        ((n - r).abs() < 1e-6 * n).then_some(r as usize)
    }
}

/// Thermal noise occupations and seed for a stochastic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// n̄_O per mode in state order.
    pub occupations: Vec<f64>,
    pub seed: u64,
    /// Trajectory index: selects an independent ChaCha stream.
    #[serde(default)]
    pub stream: u64,
}

impl NoiseSpec {
    pub fn thermal(params: &SystemParams, seed: u64, stream: u64) -> Self {
        NoiseSpec { occupations: params.occupations(), seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Time series of sampled states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[C64; N]>,
    pub params_hash: String,
}

impl<const N: usize> Trajectory<N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[C64; N]> {
        self.states.last()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() || self.times.len() < 2 {
            return Err(Error::invalid("trajectory needs matching times/states with >= 2 samples"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        Ok(())
    }
}

/// Receives every stored sample of a run.
pub trait Observer<const N: usize> {
    fn observe(&mut self, t: f64, state: &[C64; N]);
}

/// Stores samples in memory.
#[derive(Default)]
pub struct Recorder<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[C64; N]>,
}

impl<const N: usize> Observer<N> for Recorder<N> {
    fn observe(&mut self, t: f64, state: &[C64; N]) {
        self.times.push(t);
        self.states.push(*state);
    }
}

impl<const N: usize, O: Observer<N> + ?Sized> Observer<N> for &mut O {
    fn observe(&mut self, t: f64, state: &[C64; N]) {
        (**self).observe(t, state)
    }
}

/// Pairs of observers are both fed.
impl<const N: usize, A: Observer<N>, B: Observer<N>> Observer<N> for (A, B) {
    fn observe(&mut self, t: f64, state: &[C64; N]) {
        self.0.observe(t, state);
        self.1.observe(t, state);
    }
}

#[inline]
fn axpy<const N: usize>(x: &[C64; N], h: f64, k: &[C64; N]) -> [C64; N] {
    std::array::from_fn(|i| x[i] + k[i] * h)
}

#[inline]
fn check<const N: usize>(s: &[C64; N], t: f64) -> Result<()> {
    let lim2 = DIVERGENCE_LIMIT * DIVERGENCE_LIMIT;
    // `!(x <= lim)` also catches NaN
    if s.iter().any(|z| !(z.norm_sqr() <= lim2)) {
        return Err(Error::Divergence { time: t });
    }
    Ok(())
}

#[inline]
pub fn rk4_step<const N: usize, D: Drift<N> + ?Sized>(drift: &D, s: &[C64; N], dt: f64) -> [C64; N] {
    let k1 = drift.eval(s);
    let k2 = drift.eval(&axpy(s, 0.5 * dt, &k1));
    let k3 = drift.eval(&axpy(s, 0.5 * dt, &k2));
    let k4 = drift.eval(&axpy(s, dt, &k3));
    std::array::from_fn(|i| s[i] + (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) * (dt / 6.0))
}

#[inline]
fn heun_step<const N: usize, D: Drift<N> + ?Sized>(drift: &D, s: &[C64; N], dt: f64, dw: &[C64; N]) -> [C64; N] {
    let f0 = drift.eval(s);
    let pred: [C64; N] = std::array::from_fn(|i| s[i] + f0[i] * dt + dw[i]);
    let f1 = drift.eval(&pred);
    std::array::from_fn(|i| s[i] + (f0[i] + f1[i]) * (0.5 * dt) + dw[i])
}

/// Integrates from t = 0, feeding every `sample_stride`-th state (including the
/// initial one) to `observer`. Returns the final state.
///
/// With `noise = Some(..)` the method must be Heun; each step adds independent
/// complex increments √(2κ_O)·dW_O with ⟨|dW_O|²⟩ = (n̄_O + ½)dt.
pub fn integrate_observed<const N: usize, D, O>(
    drift: &D,
    state0: [C64; N],
    spec: &IntegrationSpec,
    noise: Option<&NoiseSpec>,
    observer: &mut O,
) -> Result<[C64; N]>
where
    D: Drift<N> + ?Sized,
    O: Observer<N> + ?Sized,
{
    spec.validate()?;
    check(&state0, 0.0)?;
    let steps = spec.steps();
    let dt = spec.dt;
    let stride = spec.sample_stride as u64;
    let mut s = state0;
    observer.observe(0.0, &s);

    match noise {
        None => {
            for n in 1..=steps {
                s = match spec.method {
                    Method::Rk4 => rk4_step(drift, &s, dt),
                    Method::Heun => heun_step(drift, &s, dt, &[C64::new(0.0, 0.0); N]),
                };
                let t = n as f64 * dt;
                check(&s, t)?;
                if n % stride == 0 {
                    observer.observe(t, &s);
                }
            }
        }
        Some(noise) => {
            if spec.method != Method::Heun {
                return Err(Error::invalid("stochastic integration requires the Heun method"));
            }
            if noise.occupations.len() != N {
                return Err(Error::invalid(format!("noise needs {N} occupations, got {}", noise.occupations.len())));
            }
            if noise.occupations.iter().any(|&n| !(n >= 0.0)) {
                return Err(Error::invalid("occupations must be >= 0"));
            }
            let rates = drift.decay_rates();
            // per-quadrature standard deviation of √(2κ) dW
            let sigma: [f64; N] =
                std::array::from_fn(|i| (2.0 * rates[i] * (noise.occupations[i] + 0.5) * dt * 0.5).sqrt());
            let mut rng = noise.rng();
            for n in 1..=steps {
                let dw: [C64; N] = std::array::from_fn(|i| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im) * sigma[i]
                });
                s = heun_step(drift, &s, dt, &dw);
                let t = n as f64 * dt;
                check(&s, t)?;
                if n % stride == 0 {
                    observer.observe(t, &s);
                }
            }
        }
    }
    Ok(s)
}

/// Fixed-step RK4 trajectory.
pub fn integrate_deterministic<const N: usize, D: Drift<N> + ?Sized>(
    drift: &D,
    state0: [C64; N],
    spec: &IntegrationSpec,
) -> Result<Trajectory<N>> {
    let mut rec = Recorder::default();
    let spec = IntegrationSpec { method: Method::Rk4, ..*spec };
    integrate_observed(drift, state0, &spec, None, &mut rec)?;
    Ok(Trajectory { times: rec.times, states: rec.states, params_hash: String::new() })
}

/// Stochastic Heun trajectory with additive thermal noise.
pub fn integrate_stochastic<const N: usize, D: Drift<N> + ?Sized>(
    drift: &D,
    noise: &NoiseSpec,
    state0: [C64; N],
    spec: &IntegrationSpec,
) -> Result<Trajectory<N>> {
    let mut rec = Recorder::default();
    integrate_observed(drift, state0, spec, Some(noise), &mut rec)?;
    Ok(Trajectory { times: rec.times, states: rec.states, params_hash: String::new() })
}

/// Draws every mode as a complex Gaussian with ⟨|O|²⟩ = n̄_O + ½
/// (variance (n̄_O + ½)/2 per quadrature).
pub fn sample_thermal_state<const N: usize, R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Result<[C64; N]> {
    if params.model_kind.n_modes() != N {
        return Err(Error::invalid(format!(
            "{} has {} modes, requested {N}",
            params.model_kind.name(),
            params.model_kind.n_modes()
        )));
    }
    if !(params.temperature >= 0.0) {
        return Err(Error::invalid("temperature must be >= 0"));
    }
    let occ = params.occupations();
    Ok(std::array::from_fn(|i| {
        let sd = ((occ[i] + 0.5) * 0.5).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * sd, im * sd)
    }))
}

/// Thermal initial state from a dedicated stream of `seed`.
pub fn thermal_state_from_seed<const N: usize>(params: &SystemParams, seed: u64) -> Result<[C64; N]> {
    thermal_state_for_trajectory(params, seed, 0)
}

/// Thermal initial state of ensemble member `index`. Initial states count
/// streams down from `u64::MAX`; noise streams count up from 0.
pub fn thermal_state_for_trajectory<const N: usize>(params: &SystemParams, seed: u64, index: u64) -> Result<[C64; N]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - index);
    sample_thermal_state(params, &mut rng)
}

/// Model-agnostic container for reports and files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum SystemState {
    OneSphere { a: C64, m: C64, b1: C64, b2: C64 },
    TwoSphere { a: C64, m1: C64, m2: C64, b1: C64, b2: C64 },
}

impl From<[C64; 4]> for SystemState {
    fn from(s: [C64; 4]) -> Self {
        SystemState::OneSphere { a: s[0], m: s[1], b1: s[2], b2: s[3] }
    }
}

impl From<[C64; 5]> for SystemState {
    fn from(s: [C64; 5]) -> Self {
        SystemState::TwoSphere { a: s[0], m1: s[1], m2: s[2], b1: s[3], b2: s[4] }
    }
}

impl SystemState {
    pub fn modes(&self) -> Vec<C64> {
        match *self {
            SystemState::OneSphere { a, m, b1, b2 } => vec![a, m, b1, b2],
            SystemState::TwoSphere { a, m1, m2, b1, b2 } => vec![a, m1, m2, b1, b2],
        }
    }

    /// Real layout (Re, Im) per mode: 8 or 10 numbers.
    pub fn to_real(&self) -> Vec<f64> {
        self.modes().iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_params, default_two_sphere_params, nondimensionalize, Drive};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn origin_is_fixed_without_drive() {
        let mut p = nondimensionalize(&default_params());
        p.drive = Drive::MagnonDrive { amplitude: 0.0 };
        let d = OneSphere::new(&p).unwrap();
        assert!(d.eval(&[C64::default(); 4]).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn only_magnon_responds_to_drive_at_origin() {
        let p = nondimensionalize(&default_params());
        let d = OneSphere::new(&p).unwrap();
        let out = d.eval(&[C64::default(); 4]);
        assert_eq!(out[0], C64::default());
        assert_eq!(out[1], c(p.drive.amplitude(), 0.0));
        assert_eq!(out[2], C64::default());
        assert_eq!(out[3], C64::default());
    }

    #[test]
    fn model_mismatch_is_rejected() {
        assert!(matches!(OneSphere::new(&default_two_sphere_params()), Err(Error::ModelMismatch { .. })));
        assert!(matches!(TwoSphere::new(&default_params()), Err(Error::ModelMismatch { .. })));
    }

    #[test]
    fn two_sphere_zero_drive_and_decoupling() {
        let mut p = nondimensionalize(&default_two_sphere_params());
        p.drive = Drive::CavityDrive { amplitude: 0.0 };
        let d = TwoSphere::new(&p).unwrap();
        assert!(d.eval(&[C64::default(); 5]).iter().all(|z| z.norm() == 0.0));

        p.g_ma = 0.0;
        let d = TwoSphere::new(&p).unwrap();
        let s1 = [c(1.0, 2.0), c(0.3, -0.1), c(-0.2, 0.5), c(3.0, 1.0), c(-1.0, 2.0)];
        let mut s2 = s1;
        s2[0] = c(-7.0, 4.0);
        let (o1, o2) = (d.eval(&s1), d.eval(&s2));
        assert_eq!(o1[1], o2[1]);
        assert_eq!(o1[2], o2[2]);
    }

    #[test]
    fn energy_bookkeeping_without_magnetostriction() {
        let mut p = nondimensionalize(&default_params());
        p.g_1 = 0.0;
        p.g_2 = 0.0;
        let d = OneSphere::new(&p).unwrap();
        let s = [c(0.4, -1.2), c(2.0, 0.7), c(5.0, 1.0), c(-3.0, 0.2)];
        let f = d.eval(&s);
        let lhs = 2.0 * (s[0].conj() * f[0]).re + 2.0 * (s[1].conj() * f[1]).re;
        let omega = p.drive.amplitude();
        let rhs = -2.0 * p.kappa_a * s[0].norm_sqr() - 2.0 * p.magnons[0].kappa * s[1].norm_sqr()
            + 2.0 * (C64::new(omega, 0.0) * s[1].conj()).re;
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn resolving_spec_divides_period() {
        let p = nondimensionalize(&default_params());
        let spec = IntegrationSpec::resolving(&p, 100.0, Method::Rk4);
        assert!(spec.dt <= 0.02 / p.omega_2 + 1e-15);
        let n = spec.steps_per_period(p.omega_bar()).unwrap();
        assert_eq!(n, spec.sample_stride * SAMPLES_PER_PERIOD);
        assert!(spec.dt * p.omega_2.max(p.delta_a.abs()).max(p.kappa_a) <= 0.1);
    }

    #[test]
    fn spec_validation() {
        let bad = IntegrationSpec { t_end: 1.0, dt: 0.0, sample_stride: 1, method: Method::Rk4 };
        assert!(bad.validate().is_err());
        let bad = IntegrationSpec { t_end: 0.01, dt: 0.1, sample_stride: 1, method: Method::Rk4 };
        assert!(bad.validate().is_err());
        let bad = IntegrationSpec { t_end: 1.0, dt: 0.1, sample_stride: 0, method: Method::Rk4 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn divergence_reports_time() {
        struct Blowup;
        impl Drift<1> for Blowup {
            fn eval(&self, s: &[C64; 1]) -> [C64; 1] {
                [s[0] * s[0]]
            }
            fn decay_rates(&self) -> [f64; 1] {
                [0.0]
            }
        }
        let spec = IntegrationSpec { t_end: 10.0, dt: 1e-3, sample_stride: 1, method: Method::Rk4 };
        match integrate_deterministic(&Blowup, [c(1.0, 0.0)], &spec) {
            Err(Error::Divergence { time }) => assert!(time > 0.9 && time < 1.01, "t = {time}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stochastic_requires_heun() {
        let spec = IntegrationSpec { t_end: 1.0, dt: 0.1, sample_stride: 1, method: Method::Rk4 };
        let noise = NoiseSpec { occupations: vec![0.0], seed: 1, stream: 0 };
        assert!(integrate_stochastic(&OuMode { kappa: 1.0 }, &noise, [C64::default()], &spec).is_err());
    }

    #[test]
    fn zero_temperature_thermal_state_is_vacuum() {
        let mut p = default_params();
        p.temperature = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut acc = [0.0f64; 2];
        for _ in 0..n {
            let s: [C64; 4] = sample_thermal_state(&p, &mut rng).unwrap();
            acc[0] += s[2].re * s[2].re;
            acc[1] += s[2].im * s[2].im;
        }
        for v in acc {
            assert!((v / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn thermal_state_wrong_arity() {
        let p = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_thermal_state::<5, _>(&p, &mut rng).is_err());
    }

    #[test]
    fn thermal_state_is_seed_deterministic() {
        let p = default_params();
        let a: [C64; 4] = thermal_state_from_seed(&p, 42).unwrap();
        let b: [C64; 4] = thermal_state_from_seed(&p, 42).unwrap();
        let c: [C64; 4] = thermal_state_from_seed(&p, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
