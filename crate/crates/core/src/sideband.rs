//! Sideband expansion of the driven magnon under a harmonically modulated
//! mechanical shift.
//!
//! With the mechanics in a limit cycle `b_j = β_j + B_j e^{−iω̄t}`, the magnon
//! is expanded as `m(t) = Σ_n M_n e^{in(ω̄t−φ)}` where `B̃ = Σ_j g_j B_j =
//! |B̃|e^{iφ}`. Writing `x = 2|B̃|/ω̄`, the amplitudes satisfy
//!
//! ```text
//! M_n = Σ_p J_{n−p}(−x) u_p
//! u_p = Σ_l J_{p−l}(x) (Ω δ_{l0} − g_ma² M_l / A_l) / D_p
//! A_l = i(Δ_a + lω̄) + κ_a,   D_p = i(Δ_m + β̃ + pω̄) + κ_m
//! ```
//!
//! which is linear in `M` at fixed static shift β̃. The shift closes through
//! `β̃ = −λ Σ|M_n|²` with `λ = Σ_j 2g_j²ω_j/(ω_j²+γ_j²)`.
//!
//! The inner problem is relaxed fixed-point iteration with a direct linear
//! solve as fallback. The outer scalar problem is a bracketed secant search
//! seeded with the plain fixed-point update.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::C64;
use crate::error::{Error, Result};
use crate::model::{ModelKind, SystemParams};

/// Bessel functions `J_0(x) … J_{n_max}(x)` by Miller's downward recurrence,
/// normalized with `J_0 + 2Σ_k J_{2k} = 1`.
pub fn bessel_j_table(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = n_max.max(ax.ceil() as usize);
    let mut start = top + 30 + (16.0 * (top as f64).cbrt()).ceil() as usize;
    start += start % 2;

    const BIG: f64 = 1e250;
    let mut next = 0.0; // J_{k+1}
    let mut cur = 1.0; // J_k
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        if k <= n_max {
            out[k] = cur;
        }
        if k % 2 == 0 {
            sum += 2.0 * cur;
        }
        let prev = (2.0 * k as f64 / ax) * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > BIG {
            cur /= BIG;
            next /= BIG;
            sum /= BIG;
            out.iter_mut().for_each(|v| *v /= BIG);
        }
    }
    out[0] = cur;
    sum += cur;
    for (n, v) in out.iter_mut().enumerate() {
        *v /= sum;
        if x < 0.0 && n % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// Bessel function of the first kind `J_n(x)` for any integer order.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let k = n.unsigned_abs() as usize;
    let v = bessel_j_table(k, x)[k];
    if n < 0 && k % 2 == 1 {
        -v
    } else {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidebandOptions {
    /// Truncation order; `None` picks `ceil(2|B̃|/ω̄) + 20`.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Relative convergence tolerance of both loops.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relaxation factor of the inner fixed-point update.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    /// Skip the inner iteration and solve the linear system directly.
    #[serde(default)]
    pub direct: bool,
}

fn default_eps() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    500
}
fn default_relaxation() -> f64 {
    0.5
}

impl Default for SidebandOptions {
    fn default() -> Self {
        SidebandOptions {
            n_max: None,
            eps: default_eps(),
            max_iter: default_max_iter(),
            relaxation: default_relaxation(),
            direct: false,
        }
    }
}

/// Extra truncation orders beyond the Bessel argument required by the solver.
pub const MIN_TRUNCATION_MARGIN: usize = 15;
/// Truncation margin used when `n_max` is not given.
pub const DEFAULT_TRUNCATION_MARGIN: usize = 20;
/// Edge-to-peak ratio above which a truncation is flagged as under-resolved.
pub const TRUNCATION_WARNING_RATIO: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidebandSolution {
    pub n_max: usize,
    /// `M_n` for `n = −n_max ..= n_max`.
    pub m: Vec<C64>,
    pub beta_s: [C64; 2],
    pub beta_tilde_s: f64,
    pub b_tilde_mag: f64,
    pub iterations: usize,
    pub residual: f64,
    pub truncation_warning: bool,
}

impl SidebandSolution {
    /// `M_n`, zero outside the truncation.
    pub fn amplitude(&self, n: i64) -> C64 {
        let idx = n + self.n_max as i64;
        if idx < 0 || idx as usize >= self.m.len() {
            C64::default()
        } else {
            self.m[idx as usize]
        }
    }

    /// `Σ_n |M_n|²`.
    pub fn total_occupation(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `m(t)` at phase `ψ = ω̄t − φ`.
    pub fn magnon_at(&self, psi: f64) -> C64 {
        let n0 = self.n_max as i64;
        self.m.iter().enumerate().map(|(i, &mn)| mn * C64::from_polar(1.0, (i as i64 - n0) as f64 * psi)).sum()
    }
}

/// Linear map `M ↦ S + K M` of the sideband equations at fixed β̃.
struct Kernel {
    n: usize,
    /// `J_k(x)` for `k = 0 ..= 3n`.
    jt: Vec<f64>,
    a_inv: Vec<C64>,
    drive: f64,
    g_ma2: f64,
    delta_m: f64,
    kappa_m: f64,
    omega_bar: f64,
}

impl Kernel {
    fn new(p: &SystemParams, x: f64, n: usize) -> Self {
        let omega_bar = p.omega_bar();
        let a_inv =
            (-(n as i64)..=n as i64).map(|l| C64::new(p.kappa_a, p.delta_a + l as f64 * omega_bar).inv()).collect();
        let mag = p.magnons[0];
        Kernel {
            n,
            jt: bessel_j_table(3 * n, x),
            a_inv,
            drive: p.drive.amplitude(),
            g_ma2: p.g_ma * p.g_ma,
            delta_m: mag.delta,
            kappa_m: mag.kappa,
            omega_bar,
        }
    }

    #[inline]
    fn j(&self, k: i64) -> f64 {
        let v = self.jt[k.unsigned_abs() as usize];
        if k < 0 && k % 2 != 0 {
            -v
        } else {
            v
        }
    }

    fn d_inv(&self, beta_tilde: f64) -> Vec<C64> {
        let n = self.n as i64;
        (-2 * n..=2 * n)
            .map(|p| C64::new(self.kappa_m, self.delta_m + beta_tilde + p as f64 * self.omega_bar).inv())
            .collect()
    }

    /// `S·drive_scale + K M`.
    fn apply(&self, d_inv: &[C64], m: &[C64], drive_scale: f64, out: &mut [C64]) {
        let n = self.n as i64;
        let s: Vec<C64> = (-n..=n)
            .map(|l| {
                let i = (l + n) as usize;
                let src = if l == 0 { C64::new(self.drive * drive_scale, 0.0) } else { C64::default() };
                src - m[i] * self.a_inv[i] * self.g_ma2
            })
            .collect();
        let u: Vec<C64> = (-2 * n..=2 * n)
            .map(|p| {
                let lo = (p - n).max(-n);
                let hi = (p + n).min(n);
                let acc: C64 = (lo..=hi).map(|l| s[(l + n) as usize] * self.j(p - l)).sum();
                acc * d_inv[(p + 2 * n) as usize]
            })
            .collect();
        for nn in -n..=n {
            // J_{n−p}(−x) = J_{p−n}(x)
            out[(nn + n) as usize] = (-2 * n..=2 * n).map(|p| u[(p + 2 * n) as usize] * self.j(p - nn)).sum();
        }
    }

    fn solve_direct(&self, d_inv: &[C64]) -> Result<Vec<C64>> {
        let dim = 2 * self.n + 1;
        let mut k = DMatrix::<C64>::zeros(dim, dim);
        let mut e = vec![C64::default(); dim];
        let mut col = vec![C64::default(); dim];
        for j in 0..dim {
            e[j] = C64::new(1.0, 0.0);
            self.apply(d_inv, &e, 0.0, &mut col);
            e[j] = C64::default();
            for i in 0..dim {
                k[(i, j)] = -col[i];
            }
            k[(j, j)] += C64::new(1.0, 0.0);
        }
        let zero = vec![C64::default(); dim];
        self.apply(d_inv, &zero, 1.0, &mut col);
        let rhs = DVector::from_vec(col);
        k.lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Singular("sideband linear system".into()))
    }

    /// Solves the linear sideband problem at fixed β̃; returns `(M, iterations, residual)`.
    fn solve(&self, beta_tilde: f64, guess: &[C64], opts: &SidebandOptions) -> Result<(Vec<C64>, usize, f64)> {
        let d_inv = self.d_inv(beta_tilde);
        let dim = guess.len();
        if !opts.direct {
            let mut m = guess.to_vec();
            let mut next = vec![C64::default(); dim];
            let mut best = f64::INFINITY;
            let mut since_best = 0usize;
            for it in 1..=opts.max_iter {
                self.apply(&d_inv, &m, 1.0, &mut next);
                let scale = next.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                let mut delta = 0.0f64;
                for (mi, ni) in m.iter_mut().zip(&next) {
                    let step = (*ni - *mi) * opts.relaxation;
                    delta = delta.max(step.norm());
                    *mi += step;
                }
                let rel = delta / scale;
                if rel < opts.eps {
                    return Ok((m, it, rel));
                }
                if !rel.is_finite() {
                    break;
                }
                if rel < 0.5 * best {
                    best = rel;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= 20 {
                        break;
                    }
                }
            }
            log::debug!("sideband iteration stalled at β̃ = {beta_tilde}; switching to direct solve");
        }
        let m = self.solve_direct(&d_inv)?;
        let mut check = vec![C64::default(); dim];
        self.apply(&d_inv, &m, 1.0, &mut check);
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let res = m.iter().zip(&check).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
        Ok((m, 1, res))
    }
}

fn check_one_sphere(params: &SystemParams) -> Result<()> {
    if params.model_kind != ModelKind::OneSphere {
        return Err(Error::ModelMismatch { expected: "OneSphere", found: params.model_kind.name() });
    }
    params.validate()
}

/// Truncation order used for a given `|B̃|` when none is requested.
pub fn default_n_max(params: &SystemParams, b_tilde_mag: f64) -> usize {
    (2.0 * b_tilde_mag / params.omega_bar()).ceil() as usize + DEFAULT_TRUNCATION_MARGIN
}

/// Self-consistent sideband amplitudes at `|B̃|`, starting the static shift
/// search from `β̃ = 0`.
pub fn solve_sidebands(params: &SystemParams, b_tilde_mag: f64, opts: &SidebandOptions) -> Result<SidebandSolution> {
    solve_sidebands_from(params, b_tilde_mag, opts, 0.0)
}

/// As [`solve_sidebands`] with an initial guess for β̃ (continuation).
pub fn solve_sidebands_from(
    params: &SystemParams,
    b_tilde_mag: f64,
    opts: &SidebandOptions,
    beta_guess: f64,
) -> Result<SidebandSolution> {
    check_one_sphere(params)?;
    if !(b_tilde_mag >= 0.0) || !b_tilde_mag.is_finite() {
        return Err(Error::invalid(format!("|B̃| must be finite and >= 0, got {b_tilde_mag}")));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::invalid("relaxation must lie in (0, 1]"));
    }
    let x = 2.0 * b_tilde_mag / params.omega_bar();
    let min_n = x.ceil() as usize + MIN_TRUNCATION_MARGIN;
    let n = opts.n_max.unwrap_or_else(|| default_n_max(params, b_tilde_mag));
    if n < min_n {
        return Err(Error::invalid(format!("n_max = {n} is below ceil(2|B̃|/ω̄) + {MIN_TRUNCATION_MARGIN} = {min_n}")));
    }
    let kernel = Kernel::new(params, x, n);
    let lambda = params.static_shift_coefficient();
    let dim = 2 * n + 1;
    let mag = params.magnons[0];
    let mut guess = vec![C64::default(); dim];
    guess[n] = C64::new(params.drive.amplitude(), 0.0) / C64::new(mag.kappa, mag.delta);

    let mut iterations = 0usize;
    let mut inner_res = 0.0f64;
    let mut eval = |beta: f64, guess: &mut Vec<C64>| -> Result<f64> {
        let (m, it, res) = kernel.solve(beta, guess, opts)?;
        iterations += it;
        inner_res = inner_res.max(res);
        *guess = m;
        Ok(guess.iter().map(|z| z.norm_sqr()).sum::<f64>())
    };

    let (beta, outer_res) = if lambda == 0.0 {
        eval(0.0, &mut guess)?;
        (0.0, 0.0)
    } else {
        // g(β̃) = β̃ + λ c₀(β̃); the root lies in [−λΩ²/κ_m², 0] because c₀ ≤ Ω²/κ_m²
        let floor = -lambda * (params.drive.amplitude() / mag.kappa).powi(2);
        let g = |beta: f64, c0: f64| beta + lambda * c0;
        let tol = |beta: f64| opts.eps * beta.abs().max(f64::MIN_POSITIVE);
        let mut b0 = beta_guess.clamp(floor, 0.0);
        let mut g0 = g(b0, eval(b0, &mut guess)?);
        let mut outer = 0usize;
        let mut done = g0.abs() <= tol(b0);
        // bracket [lo, hi] with g(lo) ≤ 0 ≤ g(hi)
        let (mut lo, mut glo, mut hi, mut ghi) =
            if g0 > 0.0 { (f64::NAN, f64::NAN, b0, g0) } else { (b0, g0, f64::NAN, f64::NAN) };
        let mut step = g0.abs().max(tol(b0));
        while !done && (lo.is_nan() || hi.is_nan()) {
            outer += 1;
            if outer > opts.max_iter {
                return Err(Error::Convergence {
                    what: "sideband static shift bracket",
                    iterations: outer,
                    residual: g0.abs(),
                });
            }
            let b1 = if g0 > 0.0 { (b0 - step).max(floor) } else { (b0 + step).min(0.0) };
            let g1 = g(b1, eval(b1, &mut guess)?);
            if g1 > 0.0 {
                hi = b1;
                ghi = g1;
            } else {
                lo = b1;
                glo = g1;
            }
            if g1.abs() <= tol(b1) {
                b0 = b1;
                g0 = g1;
                done = true;
            } else if (lo.is_nan() || hi.is_nan()) && (b1 == floor || b1 == 0.0) {
                // g(0) ≥ 0 and g(floor) ≤ 0 analytically; a violation means a numerical failure
                return Err(Error::Convergence {
                    what: "sideband static shift bracket",
                    iterations: outer,
                    residual: g1.abs(),
                });
            } else {
                b0 = b1;
                g0 = g1;
                step *= 2.0;
            }
        }
        // Illinois regula falsi
        let mut side = 0i8;
        while !done {
            outer += 1;
            if outer > opts.max_iter {
                return Err(Error::Convergence {
                    what: "sideband static shift",
                    iterations: outer,
                    residual: g0.abs() / lambda.max(f64::MIN_POSITIVE),
                });
            }
            let mut b = (lo * ghi - hi * glo) / (ghi - glo);
            if !(b > lo && b < hi) {
                b = 0.5 * (lo + hi);
            }
            let gb = g(b, eval(b, &mut guess)?);
            b0 = b;
            g0 = gb;
            if gb.abs() <= tol(b) || (hi - lo) <= tol(b) {
                done = true;
            } else if gb > 0.0 {
                hi = b;
                ghi = gb;
                if side == 1 {
                    glo *= 0.5;
                }
                side = 1;
            } else {
                lo = b;
                glo = gb;
                if side == -1 {
                    ghi *= 0.5;
                }
                side = -1;
            }
        }
        // final amplitudes at the accepted shift
        if guess.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Convergence { what: "sideband amplitudes", iterations, residual: f64::INFINITY });
        }
        (b0, g0.abs() / b0.abs().max(f64::MIN_POSITIVE))
    };

    let m = guess;
    let c0: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    let beta_s = std::array::from_fn(|j| {
        let (g, w, gam) = (params.couplings()[j], params.omegas()[j], params.gammas()[j]);
        C64::new(0.0, -g * c0) / C64::new(gam, w)
    });
    let peak = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = m[0].norm().max(m[dim - 1].norm());
    let truncation_warning = peak > 0.0 && edge / peak > TRUNCATION_WARNING_RATIO;
    if truncation_warning {
        log::warn!(
            "sideband truncation n_max = {n} under-resolved at |B̃| = {b_tilde_mag} (edge/peak {:e})",
            edge / peak
        );
    }
    Ok(SidebandSolution {
        n_max: n,
        m,
        beta_s,
        beta_tilde_s: beta,
        b_tilde_mag,
        iterations,
        residual: inner_res.max(outer_res),
        truncation_warning,
    })
}

/// `F = (g̃/|B̃|) Σ_n M_n M*_{n+1}`.
pub fn compute_f(sol: &SidebandSolution, params: &SystemParams) -> Result<C64> {
    if !(sol.b_tilde_mag > 0.0) {
        return Err(Error::invalid("F requires |B̃| > 0"));
    }
    let sum: C64 = sol.m.windows(2).map(|w| w[0] * w[1].conj()).sum();
    Ok(sum * (params.g_tilde() / sol.b_tilde_mag))
}

/// Harmonics `c_n = Σ_{n'} M_{n+n'} M*_{n'}` of `|m(t)|²` for `n = −2n_max ..= 2n_max`
/// (index `n + 2n_max`).
pub fn magnon_excitation_harmonics(sol: &SidebandSolution) -> Vec<C64> {
    let n = sol.n_max as i64;
    let mut out = vec![C64::default(); (4 * n + 1) as usize];
    for k in 0..=2 * n {
        let c: C64 = (-n..=n).map(|np| sol.amplitude(k + np) * sol.amplitude(np).conj()).sum();
        out[(2 * n + k) as usize] = c;
        out[(2 * n - k) as usize] = c.conj();
    }
    out[(2 * n) as usize] = C64::new(out[(2 * n) as usize].re, 0.0);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FCurvePoint {
    pub b_tilde: f64,
    /// `None` when the solve failed at this point.
    pub f: Option<C64>,
    pub converged: bool,
    pub iterations: usize,
    pub beta_tilde_s: f64,
}

/// `F(|B̃|)` along `b_grid` with continuation of β̃ from point to point.
/// Failed points are kept and flagged.
pub fn f_curve(params: &SystemParams, b_grid: &[f64], opts: &SidebandOptions) -> Result<Vec<FCurvePoint>> {
    check_one_sphere(params)?;
    if b_grid.iter().any(|&b| !(b > 0.0)) || b_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("|B̃| grid must be positive and strictly increasing"));
    }
    let mut beta = 0.0;
    Ok(b_grid
        .iter()
        .map(|&b| match solve_sidebands_from(params, b, opts, beta).and_then(|s| Ok((compute_f(&s, params)?, s))) {
            Ok((f, s)) => {
                beta = s.beta_tilde_s;
                FCurvePoint {
                    b_tilde: b,
                    f: Some(f),
                    converged: true,
                    iterations: s.iterations,
                    beta_tilde_s: s.beta_tilde_s,
                }
            }
            Err(e) => {
                log::warn!("F curve point |B̃| = {b} failed: {e}");
                FCurvePoint { b_tilde: b, f: None, converged: false, iterations: 0, beta_tilde_s: f64::NAN }
            }
        })
        .collect())
}
