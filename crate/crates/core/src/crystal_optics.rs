//! Dispersion and phase matching for a negative uniaxial crystal in
//! non-collinear type I configuration.
//!
//! The signal field propagates as an ordinary wave, the pump as an
//! extraordinary wave whose index depends on the angle to the optical axis.
//! Everything here is a pure function of the crystal description; the kernel
//! assembly in [`crate::pump_kernel`] calls into these routines.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One-pole Sellmeier dispersion formula with infrared correction:
/// `n²(λ) = a + b / (λ² − c) − d·λ²`, wavelength in micrometres.
///
/// The coefficient values are data (shipped with the default configuration),
/// not constants of the code; any uniaxial medium expressible in this form
/// can be configured. A dispersionless medium is `{a: n², b: 0, c: ≠λ², d: 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sellmeier {
    /// Constant term of n².
    pub a: f64,
    /// Numerator of the resonance pole.
    pub b: f64,
    /// Pole position (µm²).
    pub c: f64,
    /// Infrared correction coefficient (µm⁻²).
    pub d: f64,
    /// Wavelength validity band in metres (inclusive).
    pub valid_band_m: (f64, f64),
}

impl Sellmeier {
    /// Evaluate the refractive index at `wavelength_m`.
    pub fn index(&self, wavelength_m: f64) -> Result<f64> {
        let (lo, hi) = self.valid_band_m;
        if !(wavelength_m >= lo && wavelength_m <= hi) {
            return Err(Error::Config(format!(
                "wavelength {:.1} nm outside the Sellmeier validity band {:.0}–{:.0} nm",
                wavelength_m * 1e9,
                lo * 1e9,
                hi * 1e9
            )));
        }
        let um2 = (wavelength_m * 1e6).powi(2);
        let n2 = self.a + self.b / (um2 - self.c) - self.d * um2;
        if n2 <= 1.0 {
            return Err(Error::Numerical(format!(
                "Sellmeier evaluation gave n² = {n2} ≤ 1 at {:.1} nm",
                wavelength_m * 1e9
            )));
        }
        Ok(n2.sqrt())
    }
}

/// Uniaxial crystal geometry and dispersion data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    /// Crystal length ℓ_c in metres.
    pub length_m: f64,
    /// Ordinary-index dispersion.
    pub sellmeier_ordinary: Sellmeier,
    /// Principal extraordinary-index dispersion.
    pub sellmeier_extraordinary: Sellmeier,
    /// Angle between the pump propagation axis and the optical axis (rad).
    pub theta0_rad: f64,
    /// Signal-to-pump half-angle of the non-collinear geometry (rad),
    /// measured inside the crystal.
    pub noncollinear_angle_rad: f64,
}

impl CrystalSpec {
    /// β-barium borate with the published Kato Sellmeier coefficients
    /// (λ in µm, valid 220–1060 nm). `theta0_rad` starts at 0 and is filled
    /// by [`solve_phase_matching_angle`].
    pub fn bbo(length_m: f64, noncollinear_angle_rad: f64) -> CrystalSpec {
        CrystalSpec {
            length_m,
            sellmeier_ordinary: Sellmeier {
                a: 2.7405,
                b: 0.0184,
                c: 0.0179,
                d: 0.0155,
                valid_band_m: (220e-9, 1060e-9),
            },
            sellmeier_extraordinary: Sellmeier {
                a: 2.3730,
                b: 0.0128,
                c: 0.0156,
                d: 0.0044,
                valid_band_m: (220e-9, 1060e-9),
            },
            theta0_rad: 0.0,
            noncollinear_angle_rad,
        }
    }

    /// Structural sanity: positive length, angle in range.
    pub fn validate(&self) -> Result<()> {
        if self.length_m <= 0.0 {
            return Err(Error::Config("crystal.length must be > 0".into()));
        }
        if !(self.theta0_rad > 0.0 && self.theta0_rad < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(
                "crystal.theta0 must lie in (0, π/2); run the phase-matching solver first".into(),
            ));
        }
        Ok(())
    }
}

/// Ordinary refractive index n_o(λ).
pub fn refractive_index_ordinary(crystal: &CrystalSpec, wavelength_m: f64) -> Result<f64> {
    crystal.sellmeier_ordinary.index(wavelength_m)
}

/// Angle-dependent extraordinary index from the index ellipsoid:
/// `1/n(θ)² = cos²θ/n_o² + sin²θ/n_e²`.
///
/// `angle_rad = 0` reproduces the ordinary index; `π/2` the principal n_e.
pub fn refractive_index_extraordinary(
    crystal: &CrystalSpec,
    wavelength_m: f64,
    angle_rad: f64,
) -> Result<f64> {
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&angle_rad) {
        return Err(Error::Input(format!(
            "extraordinary-index angle {angle_rad} rad outside [0, π/2]"
        )));
    }
    let no = crystal.sellmeier_ordinary.index(wavelength_m)?;
    let ne = crystal.sellmeier_extraordinary.index(wavelength_m)?;
    let (s, c) = angle_rad.sin_cos();
    Ok(1.0 / (c * c / (no * no) + s * s / (ne * ne)).sqrt())
}

/// Wavenumbers and longitudinal projections of the signal and pump waves at
/// one `(q, Ω)` point. `k_z ≤ k` is guaranteed by construction (evanescent
/// components are rejected with an error).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveVectors {
    /// Signal wavenumber at detuning Ω (rad/m).
    pub k_s: f64,
    /// Pump wavenumber at (q, Ω), including the walk-off angle shift (rad/m).
    pub k_p: f64,
    /// Longitudinal projection of the signal wave (rad/m).
    pub k_sz: f64,
    /// Longitudinal projection of the pump wave (rad/m).
    pub k_pz: f64,
}

impl WaveVectors {
    /// Evaluate both dispersion relations at transverse wavenumber `q` and
    /// detuning `omega` (signal detuning from ω_s; the pump is evaluated at
    /// the same arguments interpreted as (q_sum, Ω_sum)).
    pub fn at(crystal: &CrystalSpec, pump_center_wavelength_m: f64, q: f64, omega: f64) -> Result<WaveVectors> {
        let k_s = signal_wavenumber(crystal, pump_center_wavelength_m, omega)?;
        let k_p = pump_wavenumber(crystal, pump_center_wavelength_m, q, omega)?;
        Ok(WaveVectors {
            k_s,
            k_p,
            k_sz: longitudinal(k_s, q)?,
            k_pz: longitudinal(k_p, q)?,
        })
    }
}

/// Signal wavenumber k_s(Ω) = n_o(λ(ω_s+Ω)) · (ω_s+Ω)/c, where the signal
/// carrier is the degenerate down-converted frequency ω_s = ω_p/2.
pub fn signal_wavenumber(
    crystal: &CrystalSpec,
    pump_center_wavelength_m: f64,
    omega_detuning: f64,
) -> Result<f64> {
    let omega_s = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / (2.0 * pump_center_wavelength_m);
    let omega = omega_s + omega_detuning;
    if omega <= 0.0 {
        return Err(Error::Input(format!(
            "signal detuning {omega_detuning:e} rad/s puts the frequency below zero"
        )));
    }
    let wavelength = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / omega;
    let n = refractive_index_ordinary(crystal, wavelength)?;
    Ok(n * omega / SPEED_OF_LIGHT)
}

/// Pump wavenumber k_p(q, Ω) = n_ext(θ₀ + q/k_p(0,0), λ(ω_p+Ω)) · (ω_p+Ω)/c.
///
/// The angle argument carries the first-order walk-off expansion: a pump
/// plane-wave component with transverse wavenumber q travels at angle
/// `q / k_p(0,0)` to the pump axis and therefore sees a slightly rotated
/// optical-axis angle.
pub fn pump_wavenumber(
    crystal: &CrystalSpec,
    pump_center_wavelength_m: f64,
    q: f64,
    omega_detuning: f64,
) -> Result<f64> {
    let omega_p = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / pump_center_wavelength_m;
    let omega = omega_p + omega_detuning;
    if omega <= 0.0 {
        return Err(Error::Input(format!(
            "pump detuning {omega_detuning:e} rad/s puts the frequency below zero"
        )));
    }
    let n_axis = refractive_index_extraordinary(crystal, pump_center_wavelength_m, crystal.theta0_rad)?;
    let k_p00 = n_axis * omega_p / SPEED_OF_LIGHT;
    let angle = crystal.theta0_rad + q / k_p00;
    let wavelength = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / omega;
    let n = refractive_index_extraordinary(crystal, wavelength, angle)?;
    Ok(n * omega / SPEED_OF_LIGHT)
}

/// Longitudinal projection k_z = √(k² − q²); errors on evanescent input.
pub fn longitudinal(k: f64, q: f64) -> Result<f64> {
    let k2 = k * k - q * q;
    if k2 <= 0.0 {
        return Err(Error::Numerical(format!(
            "evanescent component: |q| = {q:e} exceeds k = {k:e}"
        )));
    }
    Ok(k2.sqrt())
}

/// Longitudinal wavevector mismatch
/// `Δ = k_sz(q,Ω) + k_sz(q′,Ω′) − k_pz(q+q′, Ω+Ω′)`.
///
/// Symmetric under swapping the primed and unprimed arguments (exactly, by
/// construction). Units rad/m.
pub fn phase_mismatch(
    crystal: &CrystalSpec,
    pump_center_wavelength_m: f64,
    q: f64,
    q_prime: f64,
    omega: f64,
    omega_prime: f64,
) -> Result<f64> {
    let ks1 = signal_wavenumber(crystal, pump_center_wavelength_m, omega)?;
    let ks2 = signal_wavenumber(crystal, pump_center_wavelength_m, omega_prime)?;
    let kp = pump_wavenumber(crystal, pump_center_wavelength_m, q + q_prime, omega + omega_prime)?;
    Ok(longitudinal(ks1, q)? + longitudinal(ks2, q_prime)? - longitudinal(kp, q + q_prime)?)
}

/// Transverse wavenumber of the non-collinear signal direction,
/// q₀ = k_s(Ω=0) · sin(α).
pub fn noncollinear_q0(crystal: &CrystalSpec, pump_center_wavelength_m: f64) -> Result<f64> {
    let k_s = signal_wavenumber(crystal, pump_center_wavelength_m, 0.0)?;
    Ok(k_s * crystal.noncollinear_angle_rad.sin())
}

/// Solve for the optical-axis angle θ₀ at which the degenerate non-collinear
/// point is perfectly phase matched: Δ(+q₀, −q₀, 0, 0; θ₀) = 0.
///
/// Bracketed bisection on [1°, 89°] to 10⁻¹² rad; returns an error when no
/// sign change exists on the bracket ("no phase matching").
pub fn solve_phase_matching_angle(
    crystal: &CrystalSpec,
    noncollinear_angle_rad: f64,
    pump_center_wavelength_m: f64,
) -> Result<f64> {
    let mismatch_at = |theta: f64| -> Result<f64> {
        let mut c = crystal.clone();
        c.theta0_rad = theta;
        c.noncollinear_angle_rad = noncollinear_angle_rad;
        let q0 = noncollinear_q0(&c, pump_center_wavelength_m)?;
        phase_mismatch(&c, pump_center_wavelength_m, q0, -q0, 0.0, 0.0)
    };

    let mut lo = 1.0_f64.to_radians();
    let mut hi = 89.0_f64.to_radians();
    let f_lo = mismatch_at(lo)?;
    let f_hi = mismatch_at(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numerical(
            "no phase matching: Δ(θ) has no sign change on [1°, 89°]".into(),
        ));
    }
    let mut f_lo = f_lo;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let f_mid = mismatch_at(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
