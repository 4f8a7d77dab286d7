//! Pump description and assembly of the discretized parametric gain kernel.
//!
//! The kernel couples pairs of signal-field grid points `(q, Ω)` through the
//! pump amplitude at the sum coordinates and the phase-matching sinc:
//!
//! ```text
//! K[i][j] = A_p(q_i + q_j, Ω_i + Ω_j) · sinc(Δ_ij · ℓ_c / 2) · dq·dΩ
//! ```
//!
//! The quadrature measure `dq·dΩ` is folded into the matrix so that all
//! downstream linear algebra uses plain Euclidean inner products.

use crate::crystal_optics::{
    self, CrystalSpec, SPEED_OF_LIGHT, noncollinear_q0, phase_mismatch,
};
use crate::error::{Error, Result};
use crate::linalg::C64;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Unnormalized cardinal sine `sin(x)/x`, with a 4-term Taylor branch below
/// `|x| < 10⁻⁴` so the phase-matching factor is finite everywhere.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 5040.0
    } else {
        x.sin() / x
    }
}

/// Uniform cell-centered discretization of the `(q_y, Ω)` plane.
///
/// Flattening convention: `index = iq × n_omega + iΩ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioSpectralGrid {
    q_points: Vec<f64>,
    omega_points: Vec<f64>,
    dq: f64,
    domega: f64,
}

impl SpatioSpectralGrid {
    /// Build from explicit axes; both must be strictly increasing and
    /// uniformly spaced (relative tolerance 10⁻⁹). Single-point axes get a
    /// unit spacing so degenerate test grids carry no measure weight.
    pub fn new(q_points: Vec<f64>, omega_points: Vec<f64>) -> Result<SpatioSpectralGrid> {
        let dq = uniform_spacing(&q_points, "grid.q")?;
        let domega = uniform_spacing(&omega_points, "grid.omega")?;
        Ok(SpatioSpectralGrid { q_points, omega_points, dq, domega })
    }

    /// Cell-centered symmetric axes: `n` points spanning `(−half, +half)`
    /// with centers at `−half + (i + ½)·(2·half/n)`. Even counts therefore
    /// avoid placing a point exactly at 0.
    pub fn symmetric(n_q: usize, q_half: f64, n_omega: usize, omega_half: f64) -> Result<SpatioSpectralGrid> {
        let axis = |n: usize, half: f64| -> Vec<f64> {
            let d = 2.0 * half / n as f64;
            (0..n).map(|i| -half + (i as f64 + 0.5) * d).collect()
        };
        SpatioSpectralGrid::new(axis(n_q, q_half), axis(n_omega, omega_half))
    }

    /// Design a grid for an experiment: the q axis covers both non-collinear
    /// lobes plus the pump's transverse bandwidth, the Ω axis covers the
    /// pump's spectral extent plus the phase-matching acceptance, and at
    /// least `min_omega_half` (the analysis band, e.g. the Hermite-Gauss
    /// envelope coverage). Span multipliers ≥ 1 add safety margin.
    pub fn design(
        crystal: &CrystalSpec,
        pump: &PumpProfile,
        n_q: usize,
        n_omega: usize,
        q_span_multiplier: f64,
        omega_span_multiplier: f64,
        min_omega_half: f64,
    ) -> Result<SpatioSpectralGrid> {
        if n_q == 0 || n_omega == 0 {
            return Err(Error::Config("grid point counts must be ≥ 1".into()));
        }
        // cell centers sit half a cell inside the span: widen by n/(n−1) so
        // the outermost *point* reaches the coverage target; the extra
        // 1 + 1e-9 keeps endpoint rounding from landing one ulp inside it
        let inset = |n: usize| {
            (if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 }) * (1.0 + 1e-9)
        };
        let q0 = noncollinear_q0(crystal, pump.center_wavelength_m)?;
        let q_half = q_span_multiplier * (q0 + 4.0 / pump.waist_m) * inset(n_q);
        let pm = phase_matching_bandwidth(crystal, pump.center_wavelength_m)?;
        let pm_term = if pm.is_finite() { pm } else { 0.0 };
        let omega_needed = (3.0 * pump.sigma_omega() + pm_term).max(min_omega_half);
        let omega_half = omega_span_multiplier * omega_needed * inset(n_omega);
        SpatioSpectralGrid::symmetric(n_q, q_half, n_omega, omega_half)
    }

    pub fn n_q(&self) -> usize {
        self.q_points.len()
    }

    pub fn n_omega(&self) -> usize {
        self.omega_points.len()
    }

    /// Combined dimension N = n_q × n_omega.
    pub fn len(&self) -> usize {
        self.q_points.len() * self.omega_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q_points(&self) -> &[f64] {
        &self.q_points
    }

    pub fn omega_points(&self) -> &[f64] {
        &self.omega_points
    }

    pub fn dq(&self) -> f64 {
        self.dq
    }

    pub fn domega(&self) -> f64 {
        self.domega
    }

    /// Flat index of `(iq, iΩ)`.
    pub fn flat_index(&self, iq: usize, iomega: usize) -> usize {
        iq * self.omega_points.len() + iomega
    }

    /// `(q, Ω)` coordinates of a flat index.
    pub fn coords(&self, flat: usize) -> (f64, f64) {
        let n_om = self.omega_points.len();
        (self.q_points[flat / n_om], self.omega_points[flat % n_om])
    }

    /// Integration measure per grid cell.
    pub fn measure(&self) -> f64 {
        self.dq * self.domega
    }
}

fn uniform_spacing(points: &[f64], what: &str) -> Result<f64> {
    match points.len() {
        0 => Err(Error::Config(format!("{what}: empty axis"))),
        1 => Ok(1.0),
        _ => {
            let d = points[1] - points[0];
            if d <= 0.0 {
                return Err(Error::Config(format!("{what}: axis must be strictly increasing")));
            }
            for w in points.windows(2) {
                let step = w[1] - w[0];
                if (step - d).abs() > 1e-9 * d.abs() {
                    return Err(Error::Config(format!("{what}: axis must be uniformly spaced")));
                }
            }
            Ok(d)
        }
    }
}

/// Pump spatio-spectral description. The amplitude is a separable Gaussian
/// normalized to 1 at the origin; `chirp` adds a quadratic spectral phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpProfile {
    /// Pump carrier wavelength (m); 397.5 nm in the reference experiment.
    pub center_wavelength_m: f64,
    /// Intensity FWHM of the pump spectrum, as a wavelength width (m).
    pub spectral_fwhm_m: f64,
    /// Transverse beam waist w₀ (m).
    pub waist_m: f64,
    /// Quadratic spectral phase coefficient (s²); 0 keeps the kernel real.
    pub chirp_s2: f64,
    /// Dimensionless peak gain g multiplying the normalized kernel spectrum.
    pub gain: f64,
}

impl PumpProfile {
    pub fn validate(&self) -> Result<()> {
        if self.spectral_fwhm_m <= 0.0 {
            return Err(Error::Config("pump.spectral_fwhm must be > 0".into()));
        }
        if self.waist_m <= 0.0 {
            return Err(Error::Config("pump.waist must be > 0".into()));
        }
        if self.center_wavelength_m <= 0.0 {
            return Err(Error::Config("pump.center_wavelength must be > 0".into()));
        }
        Ok(())
    }

    /// Pump angular-frequency intensity FWHM, converted from the wavelength
    /// FWHM via Δω = 2πc·Δλ/λ².
    pub fn omega_fwhm(&self) -> f64 {
        2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * self.spectral_fwhm_m
            / (self.center_wavelength_m * self.center_wavelength_m)
    }

    /// Gaussian σ of the pump *amplitude* in Ω, such that the intensity
    /// |A_p|² has FWHM `omega_fwhm()`.
    pub fn sigma_omega(&self) -> f64 {
        self.omega_fwhm() / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Spatio-spectral pump amplitude at the sum coordinates:
    /// `exp(−q²w₀²/4) · exp(−Ω²/(4σ_Ω²)) · exp(i·chirp·Ω²)`, normalized to 1
    /// at the origin.
    pub fn amplitude(&self, q_sum: f64, omega_sum: f64) -> C64 {
        let sigma = self.sigma_omega();
        let envelope = (-q_sum * q_sum * self.waist_m * self.waist_m / 4.0
            - omega_sum * omega_sum / (4.0 * sigma * sigma))
            .exp();
        if self.chirp_s2 == 0.0 {
            C64::new(envelope, 0.0)
        } else {
            let phase = self.chirp_s2 * omega_sum * omega_sum;
            C64::new(envelope * phase.cos(), envelope * phase.sin())
        }
    }
}

/// Pump amplitude as a free function (the operation-level entry point).
pub fn pump_amplitude(q_sum: f64, omega_sum: f64, pump: &PumpProfile) -> C64 {
    pump.amplitude(q_sum, omega_sum)
}

/// Half-width at half maximum (in Ω_sum) of the phase-matching acceptance
/// along the pump-detuning direction: the Ω at which
/// `sinc²(Δ(q₀, −q₀, Ω/2, Ω/2)·ℓ_c/2)` drops to 1/2.
///
/// Returns `f64::INFINITY` when the acceptance never rolls off within the
/// dispersion model's validity window (e.g. dispersionless toy media); such
/// a medium places no phase-matching demand on the grid span.
pub fn phase_matching_bandwidth(crystal: &CrystalSpec, pump_center_wavelength_m: f64) -> Result<f64> {
    let q0 = noncollinear_q0(crystal, pump_center_wavelength_m)?;
    let half_arg = crystal.length_m / 2.0;
    let value = |omega: f64| -> Result<f64> {
        let d = phase_mismatch(crystal, pump_center_wavelength_m, q0, -q0, omega / 2.0, omega / 2.0)?;
        let s = sinc(d * half_arg);
        Ok(s * s - 0.5)
    };
    // expand until the sinc² has fallen below half power
    let mut hi = 1e12;
    loop {
        match value(hi) {
            Ok(f) if f <= 0.0 => break,
            Ok(_) => {
                hi *= 2.0;
                if hi > 1e17 {
                    return Ok(f64::INFINITY);
                }
            }
            // the half-power point lies beyond the dispersion validity band
            Err(_) => return Ok(f64::INFINITY),
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if value(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Discretized gain kernel. Real storage when the pump is unchirped (the
/// matrix is then real symmetric), complex otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<C64>),
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        match self {
            KernelMatrix::Real(m) => m.nrows(),
            KernelMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match self {
            KernelMatrix::Real(m) => C64::new(m[(i, j)], 0.0),
            KernelMatrix::Complex(m) => m[(i, j)],
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, KernelMatrix::Real(_))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        match self {
            KernelMatrix::Real(m) => m.norm(),
            KernelMatrix::Complex(m) => m.norm(),
        }
    }

    /// Largest absolute asymmetry `max|K_ij − K_ji|` (0 by construction for
    /// kernels built here; nonzero only for hand-made matrices).
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (self.get(i, j) - self.get(j, i)).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Densify to a complex matrix (copies the real storage when needed).
    pub fn to_complex(&self) -> DMatrix<C64> {
        match self {
            KernelMatrix::Real(m) => m.map(|v| C64::new(v, 0.0)),
            KernelMatrix::Complex(m) => m.clone(),
        }
    }
}

/// The assembled gain kernel with its grid and the gain scalar. `matrix`
/// excludes g: squeezing parameters are formed downstream as g·Λ_k/Λ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct GainKernel {
    pub grid: SpatioSpectralGrid,
    pub matrix: KernelMatrix,
    pub gain: f64,
}

/// Assemble the discretized kernel. Checks the grid against the physics
/// before doing any work:
///
/// * the q axis must cover both non-collinear lobes (±(q₀ + 4/w₀)),
/// * the Ω axis must cover 3× the pump spectral σ plus the phase-matching
///   acceptance,
/// * the Ω spacing must resolve the pump bandwidth (≥ 8 points per FWHM).
///
/// Single-point grids skip the coverage checks (degenerate fixtures).
pub fn build_kernel(
    grid: &SpatioSpectralGrid,
    pump: &PumpProfile,
    crystal: &CrystalSpec,
) -> Result<GainKernel> {
    pump.validate()?;
    crystal.validate()?;
    let n_q = grid.n_q();
    let n_om = grid.n_omega();
    let n = grid.len();
    let wl = pump.center_wavelength_m;

    if n_q > 1 || n_om > 1 {
        let q0 = noncollinear_q0(crystal, wl)?;
        let q_needed = q0 + 4.0 / pump.waist_m;
        let q_lo = grid.q_points()[0];
        let q_hi = *grid.q_points().last().unwrap();
        if q_lo > -q_needed || q_hi < q_needed {
            return Err(Error::Config(format!(
                "grid.q span [{q_lo:e}, {q_hi:e}] does not cover the non-collinear lobes ±{q_needed:e}"
            )));
        }
        let pm = phase_matching_bandwidth(crystal, wl)?;
        let pm_term = if pm.is_finite() { pm } else { 0.0 };
        let omega_needed = 3.0 * pump.sigma_omega() + pm_term;
        let om_lo = grid.omega_points()[0];
        let om_hi = *grid.omega_points().last().unwrap();
        if om_lo > -omega_needed || om_hi < omega_needed {
            return Err(Error::Config(format!(
                "grid.omega span [{om_lo:e}, {om_hi:e}] does not cover 3σ + phase-matching bandwidth ±{omega_needed:e}"
            )));
        }
        let points_per_fwhm = pump.omega_fwhm() / grid.domega();
        if points_per_fwhm < 8.0 {
            return Err(Error::Config(format!(
                "grid too coarse: {points_per_fwhm:.2} Ω-points per pump bandwidth (need ≥ 8)"
            )));
        }
    }

    // Longitudinal signal projections per flat grid index.
    let mut k_sz = vec![0.0_f64; n];
    for iq in 0..n_q {
        let q = grid.q_points()[iq];
        for iom in 0..n_om {
            let omega = grid.omega_points()[iom];
            let ks = crystal_optics::signal_wavenumber(crystal, wl, omega)?;
            k_sz[grid.flat_index(iq, iom)] = crystal_optics::longitudinal(ks, q)?;
        }
    }

    // Sum-coordinate tables. Uniform axes make q_i + q_j a uniform function
    // of iq + jq (and likewise for Ω), so the pump-side factors collapse to
    // (2n−1)-point lookup tables; this keeps the O(N²) assembly loop free of
    // dispersion evaluations.
    let q_sum = sum_axis(grid.q_points());
    let om_sum = sum_axis(grid.omega_points());
    let mut k_pz = vec![0.0_f64; q_sum.len() * om_sum.len()];
    for (a, &qs) in q_sum.iter().enumerate() {
        for (b, &oms) in om_sum.iter().enumerate() {
            let kp = crystal_optics::pump_wavenumber(crystal, wl, qs, oms)?;
            k_pz[a * om_sum.len() + b] = crystal_optics::longitudinal(kp, qs)?;
        }
    }
    let sigma = pump.sigma_omega();
    let a_q: Vec<f64> = q_sum
        .iter()
        .map(|&qs| (-qs * qs * pump.waist_m * pump.waist_m / 4.0).exp())
        .collect();
    let a_om: Vec<f64> = om_sum.iter().map(|&oms| (-oms * oms / (4.0 * sigma * sigma)).exp()).collect();

    let half_len = crystal.length_m / 2.0;
    let measure = grid.measure();
    let decode = |flat: usize| (flat / n_om, flat % n_om);

    let matrix = if pump.chirp_s2 == 0.0 {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let (iq, iom) = decode(i);
            for j in i..n {
                let (jq, jom) = decode(j);
                let qs_idx = iq + jq;
                let oms_idx = iom + jom;
                let delta = k_sz[i] + k_sz[j] - k_pz[qs_idx * om_sum.len() + oms_idx];
                let val = a_q[qs_idx] * a_om[oms_idx] * sinc(delta * half_len) * measure;
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
        }
        KernelMatrix::Real(m)
    } else {
        let chirp_phase: Vec<C64> = om_sum
            .iter()
            .map(|&oms| {
                let p = pump.chirp_s2 * oms * oms;
                C64::new(p.cos(), p.sin())
            })
            .collect();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            let (iq, iom) = decode(i);
            for j in i..n {
                let (jq, jom) = decode(j);
                let qs_idx = iq + jq;
                let oms_idx = iom + jom;
                let delta = k_sz[i] + k_sz[j] - k_pz[qs_idx * om_sum.len() + oms_idx];
                let env = a_q[qs_idx] * a_om[oms_idx] * sinc(delta * half_len) * measure;
                let val = chirp_phase[oms_idx] * env;
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
        }
        KernelMatrix::Complex(m)
    };

    Ok(GainKernel { grid: grid.clone(), matrix, gain: pump.gain })
}

/// All distinct values of `axis[i] + axis[j]` indexed by `i + j`. For a
/// uniform axis every pairing with the same index sum gives the same value,
/// so one representative per sum suffices.
fn sum_axis(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..(2 * n - 1))
        .map(|s| {
            let i = s.min(n - 1);
            let j = s - i;
            axis[i] + axis[j]
        })
        .collect()
}
