//! Parameter sets, physical constants, and unit handling for the one-sphere and
//! two-sphere cavity magnomechanical models.
//!
//! Every frequency, detuning, decay rate, coupling and drive amplitude in
//! [`SystemParams`] is an angular rate in rad/s (or in units of `rate_unit`
//! after [`nondimensionalize`]). Configuration files quote ordinary Hz; the
//! factor 2π is applied once when they are parsed (see [`HzParams`]).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant [J s], CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant [J/K], CODATA 2018 (exact).
pub const K_B: f64 = 1.380_649e-23;
/// Gyromagnetic ratio γ₀ = 2π × 28 GHz/T [rad s⁻¹ T⁻¹].
pub const GYROMAGNETIC_RATIO: f64 = 2.0 * PI * 28.0e9;
/// Spin density of YIG [m⁻³].
pub const YIG_SPIN_DENSITY: f64 = 4.22e27;
/// Reference Rabi frequency Ω₀ [rad/s] (B₀ = 3.8×10⁻⁵ T on a 250 µm sphere).
pub const OMEGA_0_REF: f64 = 7.0e14;
/// Sphere diameter that reproduces [`OMEGA_0_REF`] from B₀ = 3.8×10⁻⁵ T.
pub const REFERENCE_SPHERE_DIAMETER: f64 = 250.0e-6;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Cavity + one magnon + two mechanical modes of the same sphere; magnon driven.
    OneSphere,
    /// Cavity + two spheres, each with one magnon and one mechanical mode; cavity driven.
    TwoSphere,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::OneSphere => "OneSphere",
            ModelKind::TwoSphere => "TwoSphere",
        }
    }

    /// Number of complex mode amplitudes in the state vector.
    pub fn n_modes(self) -> usize {
        match self {
            ModelKind::OneSphere => 4,
            ModelKind::TwoSphere => 5,
        }
    }
}

/// Coherent drive. `MagnonDrive` is the Rabi frequency Ω, `CavityDrive` the
/// drive–cavity coupling Ω_a.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Drive {
    MagnonDrive { amplitude: f64 },
    CavityDrive { amplitude: f64 },
}

impl Drive {
    pub fn amplitude(&self) -> f64 {
        match *self {
            Drive::MagnonDrive { amplitude } | Drive::CavityDrive { amplitude } => amplitude,
        }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        match self {
            Drive::MagnonDrive { .. } => Drive::MagnonDrive { amplitude },
            Drive::CavityDrive { .. } => Drive::CavityDrive { amplitude },
        }
    }

    fn scaled(self, factor: f64) -> Self {
        self.with_amplitude(self.amplitude() * factor)
    }
}

/// One magnon (Kittel) mode: resonance, detuning from the drive, decay rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnonMode {
    pub omega: f64,
    pub delta: f64,
    pub kappa: f64,
}

/// All rates of one model variant.
///
/// `magnons` holds one entry for [`ModelKind::OneSphere`] and two for
/// [`ModelKind::TwoSphere`]. `kappa_in`/`kappa_ex` are only meaningful for the
/// two-sphere model, where `kappa_a = kappa_in + kappa_ex`.
///
/// `omega_2` is stored; the mechanical frequency difference Δω is derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub model_kind: ModelKind,
    pub omega_a: f64,
    pub delta_a: f64,
    pub kappa_a: f64,
    #[serde(default)]
    pub kappa_in: f64,
    #[serde(default)]
    pub kappa_ex: f64,
    pub magnons: Vec<MagnonMode>,
    pub omega_1: f64,
    pub omega_2: f64,
    pub gamma_1: f64,
    pub gamma_2: f64,
    pub g_1: f64,
    pub g_2: f64,
    pub g_ma: f64,
    pub drive: Drive,
    /// Bath temperature [K].
    pub temperature: f64,
    /// Physical value [rad/s] of one rate unit. 1 for physical parameter sets.
    #[serde(default = "unit_rate")]
    pub rate_unit: f64,
}

fn unit_rate() -> f64 {
    1.0
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("omega_a", self.omega_a),
            ("delta_a", self.delta_a),
            ("kappa_a", self.kappa_a),
            ("kappa_in", self.kappa_in),
            ("kappa_ex", self.kappa_ex),
            ("omega_1", self.omega_1),
            ("omega_2", self.omega_2),
            ("gamma_1", self.gamma_1),
            ("gamma_2", self.gamma_2),
            ("g_1", self.g_1),
            ("g_2", self.g_2),
            ("g_ma", self.g_ma),
            ("drive.amplitude", self.drive.amplitude()),
            ("temperature", self.temperature),
            ("rate_unit", self.rate_unit),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        for m in &self.magnons {
            if !(m.omega.is_finite() && m.delta.is_finite() && m.kappa.is_finite()) {
                return Err(Error::invalid("magnon parameters must be finite"));
            }
            if m.kappa <= 0.0 {
                return Err(Error::invalid("magnon decay rate must be > 0"));
            }
        }
        let positive = [
            ("kappa_a", self.kappa_a),
            ("gamma_1", self.gamma_1),
            ("gamma_2", self.gamma_2),
            ("omega_1", self.omega_1),
            ("omega_2", self.omega_2),
            ("rate_unit", self.rate_unit),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("g_1", self.g_1), ("g_2", self.g_2), ("g_ma", self.g_ma)] {
            if v < 0.0 {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.drive.amplitude() < 0.0 {
            return Err(Error::invalid("drive amplitude must be >= 0"));
        }
        if self.temperature < 0.0 {
            return Err(Error::invalid("temperature must be >= 0"));
        }
        match self.model_kind {
            ModelKind::OneSphere => {
                if self.magnons.len() != 1 {
                    return Err(Error::invalid("OneSphere requires exactly one magnon mode"));
                }
                if !matches!(self.drive, Drive::MagnonDrive { .. }) {
                    return Err(Error::invalid("OneSphere requires a MagnonDrive"));
                }
            }
            ModelKind::TwoSphere => {
                if self.magnons.len() != 2 {
                    return Err(Error::invalid("TwoSphere requires exactly two magnon modes"));
                }
                if !matches!(self.drive, Drive::CavityDrive { .. }) {
                    return Err(Error::invalid("TwoSphere requires a CavityDrive"));
                }
                if self.kappa_in < 0.0 || self.kappa_ex < 0.0 {
                    return Err(Error::invalid("kappa_in and kappa_ex must be >= 0"));
                }
                let sum = self.kappa_in + self.kappa_ex;
                if (self.kappa_a - sum).abs() > 1e-9 * self.kappa_a {
                    return Err(Error::invalid(format!(
                        "TwoSphere requires kappa_a = kappa_in + kappa_ex ({} != {})",
                        self.kappa_a, sum
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn delta_omega(&self) -> f64 {
        self.omega_2 - self.omega_1
    }

    /// Sets ω₂ = ω₁ + Δω.
    pub fn set_delta_omega(&mut self, delta_omega: f64) {
        self.omega_2 = self.omega_1 + delta_omega;
    }

    /// Reference frequency ω̄ = (ω₁+ω₂)/2.
    pub fn omega_bar(&self) -> f64 {
        0.5 * (self.omega_1 + self.omega_2)
    }

    /// g̃ = √(g₁²+g₂²).
    pub fn g_tilde(&self) -> f64 {
        self.g_1.hypot(self.g_2)
    }

    pub fn omegas(&self) -> [f64; 2] {
        [self.omega_1, self.omega_2]
    }

    pub fn gammas(&self) -> [f64; 2] {
        [self.gamma_1, self.gamma_2]
    }

    pub fn couplings(&self) -> [f64; 2] {
        [self.g_1, self.g_2]
    }

    /// Static Kerr-like coefficient λ = Σⱼ 2gⱼ²ωⱼ/(ωⱼ²+γⱼ²): the magnon frequency
    /// shift per unit |m|² produced by the equilibrium mechanical displacement.
    pub fn static_shift_coefficient(&self) -> f64 {
        (0..2)
            .map(|j| {
                let (g, w, y) = (self.couplings()[j], self.omegas()[j], self.gammas()[j]);
                2.0 * g * g * w / (w * w + y * y)
            })
            .sum()
    }

    /// Drive frequency ω₀ = ω_a − Δ_a.
    pub fn drive_frequency(&self) -> f64 {
        self.omega_a - self.delta_a
    }

    /// Mean thermal occupation of each mode, in state-vector order
    /// (a, m, b₁, b₂) or (a, m₁, m₂, b₁, b₂).
    pub fn occupations(&self) -> Vec<f64> {
        let t = self.temperature;
        let u = self.rate_unit;
        let mut n = vec![thermal_occupation(self.omega_a * u, t)];
        n.extend(self.magnons.iter().map(|m| thermal_occupation(m.omega * u, t)));
        n.push(thermal_occupation(self.omega_1 * u, t));
        n.push(thermal_occupation(self.omega_2 * u, t));
        n
    }

    /// Decay rate of each mode, in state-vector order.
    pub fn mode_decay_rates(&self) -> Vec<f64> {
        let mut k = vec![self.kappa_a];
        k.extend(self.magnons.iter().map(|m| m.kappa));
        k.push(self.gamma_1);
        k.push(self.gamma_2);
        k
    }

    /// True when the parameters are expressed in units of ω₁ (ω₁ = 1).
    pub fn is_scaled(&self) -> bool {
        self.omega_1 == 1.0
    }

    /// Multiplies every rate by `factor` and divides `rate_unit` by it.
    fn rescale_rates(&self, factor: f64) -> SystemParams {
        let mut p = self.clone();
        p.omega_a *= factor;
        p.delta_a *= factor;
        p.kappa_a *= factor;
        p.kappa_in *= factor;
        p.kappa_ex *= factor;
        for m in &mut p.magnons {
            m.omega *= factor;
            m.delta *= factor;
            m.kappa *= factor;
        }
        p.omega_1 *= factor;
        p.omega_2 *= factor;
        p.gamma_1 *= factor;
        p.gamma_2 *= factor;
        p.g_1 *= factor;
        p.g_2 *= factor;
        p.g_ma *= factor;
        p.drive = p.drive.scaled(factor);
        p.rate_unit /= factor;
        p
    }
}

/// Rabi frequency Ω = (√5/4)·γ₀·√N·B₀ of a YIG sphere of the given diameter in a
/// drive field B₀, with N = ρV spins.
pub fn rabi_from_drive(b0: f64, diameter: f64) -> Result<f64> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::invalid(format!("sphere diameter must be > 0, got {diameter}")));
    }
    if !(b0 >= 0.0) || !b0.is_finite() {
        return Err(Error::invalid(format!("drive field must be >= 0, got {b0}")));
    }
    let radius = 0.5 * diameter;
    let volume = 4.0 / 3.0 * PI * radius.powi(3);
    let n_spins = YIG_SPIN_DENSITY * volume;
    Ok(5f64.sqrt() / 4.0 * GYROMAGNETIC_RATIO * n_spins.sqrt() * b0)
}

/// Drive–cavity coupling Ω_a = √(2κ_ex P₀ / ħω₀).
pub fn cavity_drive_from_power(kappa_ex: f64, power: f64, drive_frequency: f64) -> Result<f64> {
    if kappa_ex < 0.0 || power < 0.0 || drive_frequency <= 0.0 {
        return Err(Error::invalid("cavity drive needs kappa_ex >= 0, P >= 0, omega_0 > 0"));
    }
    Ok((2.0 * kappa_ex * power / (HBAR * drive_frequency)).sqrt())
}

/// Bose–Einstein occupation n̄ = 1/(exp(ħω/k_BT) − 1); zero at T = 0.
pub fn thermal_occupation(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// Labelled operating points of the one-sphere phase diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatingPoint {
    /// Zero-phase synchronized.
    CaseI,
    /// π-phase synchronized.
    CaseII,
    /// Near the zero/π transition.
    CaseIII,
    /// π-phase synchronized at low drive.
    CaseIV,
}

impl OperatingPoint {
    pub const ALL: [OperatingPoint; 4] =
        [OperatingPoint::CaseI, OperatingPoint::CaseII, OperatingPoint::CaseIII, OperatingPoint::CaseIV];

    /// (log₁₀(Ω/Ω₀), g_ma/ω₁)
    pub fn coordinates(self) -> (f64, f64) {
        match self {
            OperatingPoint::CaseI => (-0.4, 0.8),
            OperatingPoint::CaseII => (-0.8, 0.8),
            OperatingPoint::CaseIII => (-0.5168, 0.7),
            OperatingPoint::CaseIV => (-1.0, 0.5),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OperatingPoint::CaseI => "i",
            OperatingPoint::CaseII => "ii",
            OperatingPoint::CaseIII => "iii",
            OperatingPoint::CaseIV => "iv",
        }
    }

    pub fn params(self) -> SystemParams {
        let (log_omega, g_ma) = self.coordinates();
        let mut p = default_params();
        p.drive = Drive::MagnonDrive { amplitude: OMEGA_0_REF * 10f64.powf(log_omega) };
        p.g_ma = g_ma * p.omega_1;
        p
    }
}

/// One-sphere parameter set: ω_a = ω_m = 2π×10 GHz, ω₁ = 2π×10 MHz,
/// ω₂ = 1.01 ω₁, Δ_a = Δ_m = −ω₁, κ_a = 2π×1.5 MHz, κ_m = 2π×1 MHz,
/// γ₁ = 2π×100 Hz, γ₂ = 2π×150 Hz, g₁ = 2π×60 mHz, g₂ = 2π×50 mHz,
/// T = 300 K, at operating point i (Ω = 10^−0.4 Ω₀, g_ma = 0.8 ω₁).
pub fn default_params() -> SystemParams {
    let omega_1 = TWO_PI * 10.0e6;
    SystemParams {
        model_kind: ModelKind::OneSphere,
        omega_a: TWO_PI * 10.0e9,
        delta_a: -omega_1,
        kappa_a: TWO_PI * 1.5e6,
        kappa_in: 0.0,
        kappa_ex: 0.0,
        magnons: vec![MagnonMode { omega: TWO_PI * 10.0e9, delta: -omega_1, kappa: TWO_PI * 1.0e6 }],
        omega_1,
        omega_2: 1.01 * omega_1,
        gamma_1: TWO_PI * 100.0,
        gamma_2: TWO_PI * 150.0,
        g_1: TWO_PI * 60.0e-3,
        g_2: TWO_PI * 50.0e-3,
        g_ma: 0.8 * omega_1,
        drive: Drive::MagnonDrive { amplitude: OMEGA_0_REF * 10f64.powf(-0.4) },
        temperature: 300.0,
        rate_unit: 1.0,
    }
}

/// Two-sphere parameter set: κ₁ = κ₂ = κ_ex = 2π×1 MHz, κ_in = 2π×0.5 MHz,
/// P₀ = 8 mW, Δ_a = Δ₁ = Δ₂ = −ω₁, g_ma = 2ω₁; remaining values as in
/// [`default_params`].
pub fn default_two_sphere_params() -> SystemParams {
    let base = default_params();
    let omega_1 = base.omega_1;
    let kappa_ex = TWO_PI * 1.0e6;
    let kappa_in = base.kappa_a - kappa_ex;
    let omega_0 = base.omega_a - base.delta_a;
    let omega_drive = cavity_drive_from_power(kappa_ex, 8.0e-3, omega_0).expect("valid constants");
    let magnon = MagnonMode { omega: TWO_PI * 10.0e9, delta: -omega_1, kappa: TWO_PI * 1.0e6 };
    SystemParams {
        model_kind: ModelKind::TwoSphere,
        kappa_in,
        kappa_ex,
        magnons: vec![magnon, magnon],
        g_ma: 2.0 * omega_1,
        drive: Drive::CavityDrive { amplitude: omega_drive },
        ..base
    }
}

/// Rescales every rate by ω₁ so that ω₁ = 1 and time is measured in 1/ω₁.
/// The scale is kept in `rate_unit`; [`restore`] inverts the map.
pub fn nondimensionalize(params: &SystemParams) -> SystemParams {
    if params.is_scaled() {
        return params.clone();
    }
    params.rescale_rates(1.0 / params.omega_1)
}

/// Returns the parameter set in physical units (rate_unit = 1).
pub fn restore(params: &SystemParams) -> SystemParams {
    let mut p = params.rescale_rates(params.rate_unit);
    p.rate_unit = 1.0;
    p
}

/// Desk-scale variant: mechanical damping γ_j × `factor`, drive amplitude × √`factor`.
/// The mechanical gain grows as Ω², so the gain-to-loss ratio and the Hopf
/// threshold stay put while every mechanical timescale shrinks by `factor`.
pub fn desk_scaled(params: &SystemParams, factor: f64) -> SystemParams {
    let mut p = params.clone();
    p.gamma_1 *= factor;
    p.gamma_2 *= factor;
    p.drive = p.drive.with_amplitude(p.drive.amplitude() * factor.sqrt());
    p
}

/// Parameter file representation: same field names as [`SystemParams`], every
/// rate given in ordinary Hz (cycles per second).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HzParams(pub SystemParams);

impl HzParams {
    pub fn into_angular(self) -> SystemParams {
        let mut p = self.0.rescale_rates(TWO_PI);
        p.rate_unit = 1.0;
        p
    }

    pub fn from_angular(params: &SystemParams) -> Self {
        let physical = restore(params);
        let mut p = physical.rescale_rates(1.0 / TWO_PI);
        p.rate_unit = 1.0;
        HzParams(p)
    }
}
