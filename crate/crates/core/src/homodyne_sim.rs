//! Homodyne detection model: quadrature variances seen through a shaped
//! local oscillator, synthetic phase-sweep traces, and extraction of
//! squeezing/antisqueezing extrema from such traces.
//!
//! Shot-noise units (SNU) throughout: vacuum variance = 1.

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::mode_decomposition::{AnalysisMode, SqueezingDecomposition, overlaps};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

/// How a squeezing parameter r maps to quadrature variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainMapping {
    /// V∓ = e^∓2r (exact single-mode squeezing).
    #[default]
    Exponential,
    /// V∓ = (1 ∓ r)² (first-order expansion, valid r ≪ 1).
    Linearized,
}

impl GainMapping {
    /// (squeezed, antisqueezed) variance pair of a pure mode with parameter r.
    pub fn variances(&self, r: f64) -> (f64, f64) {
        match self {
            GainMapping::Exponential => ((-2.0 * r).exp(), (2.0 * r).exp()),
            GainMapping::Linearized => ((1.0 - r) * (1.0 - r), (1.0 + r) * (1.0 + r)),
        }
    }
}

/// Quadrature variances of one detection mode, in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureVariances {
    /// Variance of the squeezed quadrature (X), ≤ 1 for nonzero coupling.
    pub squeezed: f64,
    /// Variance of the antisqueezed quadrature (P), ≥ 1.
    pub antisqueezed: f64,
}

/// Variance ratio in decibels: 10·log₁₀(V).
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Inverse of [`to_db`].
pub fn from_db(db: f64) -> f64 {
    10.0_f64.powf(db / 10.0)
}

/// Precomputed coupling of a detection mode to the squeezing modes:
/// `weights[k] = |⟨S_k, mode⟩|²` and the normalized Takagi spectrum. This is
/// the gain-independent part of the variance calculation, so gain sweeps and
/// calibration don't redo the overlap sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoupling {
    weights: Vec<f64>,
    lambda_rel: Vec<f64>,
    /// Weight falling outside the retained mode basis (vacuum-preserving).
    outside_weight: f64,
}

/// Project a detection mode onto the squeezing-mode basis.
///
/// The mode must be unit-norm; coupled weight beyond the retained basis is
/// treated as unsqueezed vacuum.
pub fn mode_coupling(mode: &AnalysisMode, decomp: &SqueezingDecomposition) -> Result<ModeCoupling> {
    let norm = mode.vector.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!(
            "detection mode '{}' is not normalized (‖·‖ = {norm})",
            mode.label
        )));
    }
    if decomp.is_empty() {
        return Err(Error::Input("empty decomposition".into()));
    }
    let c = overlaps(mode, decomp)?;
    let weights: Vec<f64> = c.iter().map(C64::norm_sqr).collect();
    let total: f64 = weights.iter().sum();
    if total > 1.0 + 1e-6 {
        return Err(Error::Numerical(format!(
            "mode couplings sum to {total} > 1; basis is not orthonormal"
        )));
    }
    let lambda0 = decomp.lambdas[0];
    let lambda_rel: Vec<f64> = if lambda0 > 0.0 {
        decomp.lambdas.iter().map(|l| l / lambda0).collect()
    } else {
        vec![0.0; decomp.len()]
    };
    Ok(ModeCoupling { weights, lambda_rel, outside_weight: (1.0 - total).max(0.0) })
}

/// Quadrature variances for a given peak gain and detection efficiency.
///
/// Mode k squeezes with parameter `r_k = gain · Λ_k/Λ₀`; the detection mode
/// sees the weighted mixture `V = Σ_k w_k·V_k(r_k) + w_out·1`, and the
/// efficiency folds in vacuum as `V → ηV + (1−η)`.
pub fn variances_for_gain(
    coupling: &ModeCoupling,
    gain: f64,
    mapping: GainMapping,
    efficiency: f64,
) -> Result<QuadratureVariances> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::Config(format!("efficiency {efficiency} outside [0, 1]")));
    }
    if gain < 0.0 {
        return Err(Error::Config(format!("gain {gain} must be ≥ 0")));
    }
    let mut v_sq = coupling.outside_weight;
    let mut v_anti = coupling.outside_weight;
    for (w, lr) in coupling.weights.iter().zip(&coupling.lambda_rel) {
        let (s, a) = mapping.variances(gain * lr);
        v_sq += w * s;
        v_anti += w * a;
    }
    Ok(QuadratureVariances {
        squeezed: efficiency * v_sq + (1.0 - efficiency),
        antisqueezed: efficiency * v_anti + (1.0 - efficiency),
    })
}

/// Quadrature variances of a detection mode, using the decomposition's own
/// gain. See [`variances_for_gain`].
pub fn mode_variances(
    mode: &AnalysisMode,
    decomp: &SqueezingDecomposition,
    mapping: GainMapping,
    efficiency: f64,
) -> Result<QuadratureVariances> {
    let coupling = mode_coupling(mode, decomp)?;
    variances_for_gain(&coupling, decomp.gain, mapping, efficiency)
}

/// Solve for the peak gain at which the detection mode's squeezed quadrature
/// reaches `target_db` (a negative dB value). Bisection on the monotone
/// branch; errors when the target cannot be reached.
pub fn calibrate_gain(
    coupling: &ModeCoupling,
    target_db: f64,
    mapping: GainMapping,
    efficiency: f64,
) -> Result<f64> {
    if target_db >= 0.0 {
        return Err(Error::Config(format!(
            "calibration target must be negative dB (squeezing), got {target_db}"
        )));
    }
    let target = from_db(target_db);
    let value = |g: f64| -> Result<f64> {
        Ok(variances_for_gain(coupling, g, mapping, efficiency)?.squeezed - target)
    };
    if value(0.0)? <= 0.0 {
        return Err(Error::Config("calibration target is above the vacuum level".into()));
    }
    // expand until bracketed; the squeezed variance decreases with gain on
    // the physical branch
    let mut hi = 0.1;
    let mut guard = 0;
    while value(hi)? > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 30 {
            return Err(Error::Numerical(format!(
                "calibration target {target_db} dB is unreachable with this mode coupling"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if value(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Statistical model for trace noise: each plotted variance point is an
/// estimate over a finite number of pulses, giving χ²_ν scatter with
/// ν = 2·effective_samples degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Number of statistically independent samples behind each variance
    /// point (pulses × averaging segments).
    pub effective_samples: u64,
}

/// Parameters of a synthesized phase-sweep measurement: how fast the
/// local-oscillator phase ramps, how much data is taken, and whether
/// estimator noise is modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceProtocol {
    pub phase_rate_hz: f64,
    pub periods: u32,
    pub samples_per_period: u32,
    pub noise: Option<NoiseModel>,
}

impl Default for TraceProtocol {
    fn default() -> Self {
        TraceProtocol { phase_rate_hz: 0.3, periods: 4, samples_per_period: 400, noise: None }
    }
}

/// Everything needed to reinterpret a stored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    /// Label of the detection mode the local oscillator was shaped to.
    pub mode_label: String,
    /// Local-oscillator phase ramp rate (Hz); θ(t) = 2π·rate·t.
    pub phase_rate_hz: f64,
    /// Number of variance oscillation periods in the trace.
    pub periods: u32,
    /// Samples per variance period.
    pub samples_per_period: u32,
    /// Noise model if the trace was synthesized with noise.
    pub effective_samples: Option<u64>,
    /// RNG seed used for synthesis (absent for ingested real data).
    pub seed: Option<u64>,
}

/// A variance-vs-time trace under a linear phase ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomodyneTrace {
    pub time_s: Vec<f64>,
    pub variance_snu: Vec<f64>,
    pub metadata: TraceMetadata,
}

/// Synthesize a phase-sweep trace: the local-oscillator phase ramps as
/// θ(t) = 2π·rate·t, so the measured variance oscillates as
/// `V(θ) = V_sq·cos²θ + V_anti·sin²θ` with period 1/(2·rate) in time.
///
/// With a noise model, each point is scattered as V·χ²_ν/ν (ν = 2·effective
/// samples), reproducing the estimator statistics of averaged pulsed
/// homodyne data. Identical seeds give identical traces.
pub fn synthesize_trace(
    variances: &QuadratureVariances,
    mode_label: &str,
    phase_rate_hz: f64,
    periods: u32,
    samples_per_period: u32,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<HomodyneTrace> {
    if phase_rate_hz <= 0.0 {
        return Err(Error::Config(format!("phase rate {phase_rate_hz} Hz must be > 0")));
    }
    if periods == 0 {
        return Err(Error::Config("trace needs at least one period".into()));
    }
    if samples_per_period < 8 {
        return Err(Error::Config(format!(
            "{samples_per_period} samples per period cannot resolve the variance oscillation (need ≥ 8)"
        )));
    }
    if let Some(nm) = noise {
        if nm.effective_samples < 2 {
            return Err(Error::Config("noise model needs ≥ 2 effective samples".into()));
        }
    }
    let n = periods as usize * samples_per_period as usize;
    let period_s = 1.0 / (2.0 * phase_rate_hz);
    let dt = period_s / samples_per_period as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chi = noise
        .map(|nm| {
            let nu = 2.0 * nm.effective_samples as f64;
            ChiSquared::new(nu).map(|d| (d, nu)).map_err(|e| Error::Config(e.to_string()))
        })
        .transpose()?;
    let mut time_s = Vec::with_capacity(n);
    let mut variance_snu = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let theta = 2.0 * std::f64::consts::PI * phase_rate_hz * t;
        let (s, c) = theta.sin_cos();
        let v = variances.squeezed * c * c + variances.antisqueezed * s * s;
        let v = match &chi {
            Some((dist, nu)) => v * dist.sample(&mut rng) / nu,
            None => v,
        };
        time_s.push(t);
        variance_snu.push(v);
    }
    Ok(HomodyneTrace {
        time_s,
        variance_snu,
        metadata: TraceMetadata {
            mode_label: mode_label.to_string(),
            phase_rate_hz,
            periods,
            samples_per_period,
            effective_samples: noise.map(|nm| nm.effective_samples),
            seed: Some(seed),
        },
    })
}

/// Squeezing/antisqueezing levels extracted from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremaEstimate {
    /// Mean squeezed-quadrature level over periods (dB, negative).
    pub squeezed_db: f64,
    /// Standard error of the per-period squeezed levels (0 for one period).
    pub squeezed_db_se: f64,
    pub antisqueezed_db: f64,
    pub antisqueezed_db_se: f64,
    /// Number of periods averaged.
    pub periods: u32,
}

impl ExtremaEstimate {
    /// Squeezed-quadrature variance and standard error in linear
    /// shot-noise units (delta-method conversion from dB).
    pub fn squeezed_linear(&self) -> (f64, f64) {
        let v = from_db(self.squeezed_db);
        (v, v * std::f64::consts::LN_10 / 10.0 * self.squeezed_db_se)
    }

    /// Antisqueezed-quadrature variance and standard error in linear
    /// shot-noise units.
    pub fn antisqueezed_linear(&self) -> (f64, f64) {
        let v = from_db(self.antisqueezed_db);
        (v, v * std::f64::consts::LN_10 / 10.0 * self.antisqueezed_db_se)
    }
}

/// Estimate the variance extrema of a phase-sweep trace.
///
/// Each period is fit to the harmonic model `V = a + p·cos2θ + q·sin2θ`
/// (θ reconstructed from the metadata ramp rate); the oscillation amplitude
/// `R = √(p² + q²)` is debiased by the fit covariance (`R̂² = p² + q² −
/// σ_p² − σ_q²`, floored at 0) before forming `V_min = a − R̂`, `V_max =
/// a + R̂`. This avoids the systematic low/high bias a raw min/max over
/// noisy points would pick up from extreme-value statistics. Results are
/// the mean ± standard error over periods, in dB.
pub fn extract_extrema(trace: &HomodyneTrace) -> Result<ExtremaEstimate> {
    let meta = &trace.metadata;
    let spp = meta.samples_per_period as usize;
    let periods = meta.periods as usize;
    if spp < 8 {
        return Err(Error::Input("trace has fewer than 8 samples per period".into()));
    }
    if periods == 0 || trace.time_s.len() != periods * spp || trace.variance_snu.len() != periods * spp {
        return Err(Error::Input(format!(
            "trace length {} does not match metadata ({} periods × {} samples)",
            trace.variance_snu.len(),
            meta.periods,
            meta.samples_per_period
        )));
    }
    let mut mins_db = Vec::with_capacity(periods);
    let mut maxs_db = Vec::with_capacity(periods);
    for j in 0..periods {
        let lo = j * spp;
        let seg_t = &trace.time_s[lo..lo + spp];
        let seg_v = &trace.variance_snu[lo..lo + spp];
        let (a, p, q, var_p, var_q) = harmonic_fit(seg_t, seg_v, meta.phase_rate_hz)?;
        let r2 = (p * p + q * q - var_p - var_q).max(0.0);
        let r = r2.sqrt();
        let v_min = a - r;
        let v_max = a + r;
        if v_min <= 0.0 {
            return Err(Error::Numerical(format!(
                "period {j}: fitted minimum variance {v_min} is not positive"
            )));
        }
        mins_db.push(to_db(v_min));
        maxs_db.push(to_db(v_max));
    }
    let (min_mean, min_se) = mean_and_se(&mins_db);
    let (max_mean, max_se) = mean_and_se(&maxs_db);
    Ok(ExtremaEstimate {
        squeezed_db: min_mean,
        squeezed_db_se: min_se,
        antisqueezed_db: max_mean,
        antisqueezed_db_se: max_se,
        periods: meta.periods,
    })
}

/// Least-squares fit of `v ≈ a + p·cos2θ + q·sin2θ` with θ = 2π·rate·t.
/// Returns (a, p, q, var_p, var_q) with parameter variances from the fit
/// residuals (0 when the model is exact).
fn harmonic_fit(t: &[f64], v: &[f64], phase_rate_hz: f64) -> Result<(f64, f64, f64, f64, f64)> {
    let n = t.len();
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xtv = nalgebra::Vector3::<f64>::zeros();
    let mut rows = Vec::with_capacity(n);
    for (&ti, &vi) in t.iter().zip(v) {
        let two_theta = 4.0 * std::f64::consts::PI * phase_rate_hz * ti;
        let (s, c) = two_theta.sin_cos();
        let x = nalgebra::Vector3::new(1.0, c, s);
        xtx += x * x.transpose();
        xtv += x * vi;
        rows.push(x);
    }
    let inv = xtx.try_inverse().ok_or_else(|| {
        Error::Numerical("harmonic fit is singular (degenerate phase sampling)".into())
    })?;
    let beta = inv * xtv;
    // residual variance with 3 fitted parameters
    let mut ssr = 0.0;
    for (x, &vi) in rows.iter().zip(v) {
        let r = vi - x.dot(&beta);
        ssr += r * r;
    }
    let dof = (n as f64 - 3.0).max(1.0);
    let sigma2 = ssr / dof;
    Ok((beta[0], beta[1], beta[2], sigma2 * inv[(1, 1)], sigma2 * inv[(2, 2)]))
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use crate::mode_decomposition::{SpatialPart, takagi};
    use crate::pump_kernel::{GainKernel, KernelMatrix, SpatioSpectralGrid};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    /// Decomposition of a 3-mode diagonal kernel with Λ = (2, 1, 0.5).
    fn toy_decomposition(gain: f64) -> SqueezingDecomposition {
        let grid = SpatioSpectralGrid::new(vec![0.0, 1.0, 2.0], vec![0.0]).unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
        let k = GainKernel { grid, matrix: KernelMatrix::Real(m), gain };
        takagi(&k).unwrap()
    }

    fn basis_mode(i: usize, label: &str) -> AnalysisMode {
        let mut v = DVector::<C64>::zeros(3);
        v[i] = C64::new(1.0, 0.0);
        AnalysisMode { label: label.into(), vector: v, spectral: None, spatial: SpatialPart::Full }
    }

    #[test]
    fn vacuum_at_zero_gain() {
        let d = toy_decomposition(0.0);
        let m = basis_mode(0, "m0");
        for mapping in [GainMapping::Exponential, GainMapping::Linearized] {
            for eta in [1.0, 0.21] {
                let v = mode_variances(&m, &d, mapping, eta).unwrap();
                assert_relative_eq!(v.squeezed, 1.0, epsilon = 1e-14);
                assert_relative_eq!(v.antisqueezed, 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn matched_mode_follows_exact_single_mode_formulas() {
        let g = 0.4;
        let d = toy_decomposition(g);
        // dominant mode: r = g
        let m = basis_mode(0, "m0");
        let v = mode_variances(&m, &d, GainMapping::Exponential, 1.0).unwrap();
        assert_relative_eq!(v.squeezed, (-2.0 * g).exp(), epsilon = 1e-12);
        assert_relative_eq!(v.antisqueezed, (2.0 * g).exp(), epsilon = 1e-12);
        // minimum-uncertainty product
        assert_relative_eq!(v.squeezed * v.antisqueezed, 1.0, epsilon = 1e-12);
        let vl = mode_variances(&m, &d, GainMapping::Linearized, 1.0).unwrap();
        assert_relative_eq!(vl.squeezed, (1.0 - g) * (1.0 - g), epsilon = 1e-12);
        assert_relative_eq!(vl.antisqueezed, (1.0 + g) * (1.0 + g), epsilon = 1e-12);
        // second mode: r = g·Λ₁/Λ₀ = g/2
        let m1 = basis_mode(1, "m1");
        let v1 = mode_variances(&m1, &d, GainMapping::Exponential, 1.0).unwrap();
        assert_relative_eq!(v1.squeezed, (-g).exp(), epsilon = 1e-12);
    }

    #[test]
    fn efficiency_mixes_in_vacuum_linearly() {
        let g = 0.3;
        let eta = 0.21;
        let d = toy_decomposition(g);
        let m = basis_mode(0, "m0");
        let v = mode_variances(&m, &d, GainMapping::Exponential, eta).unwrap();
        assert_relative_eq!(v.squeezed, eta * (-2.0 * g).exp() + (1.0 - eta), epsilon = 1e-12);
        assert_relative_eq!(v.antisqueezed, eta * (2.0 * g).exp() + (1.0 - eta), epsilon = 1e-12);
        assert!(mode_variances(&m, &d, GainMapping::Exponential, 1.2).is_err());
    }

    #[test]
    fn unnormalized_or_uncoupled_modes() {
        let d = toy_decomposition(0.4);
        let mut bad = basis_mode(0, "bad");
        bad.vector *= C64::new(2.0, 0.0);
        assert!(mode_coupling(&bad, &d).is_err());
        // mode outside the retained basis ⇒ pure vacuum
        let t = d.truncated(0.6); // keeps only Λ₀ = 2
        assert_eq!(t.len(), 1);
        let m2 = basis_mode(2, "m2");
        let v = mode_variances(&m2, &t, GainMapping::Exponential, 1.0).unwrap();
        assert_relative_eq!(v.squeezed, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.antisqueezed, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn squeezing_is_monotone_in_gain() {
        let d = toy_decomposition(0.1);
        let m = basis_mode(0, "m0");
        let coupling = mode_coupling(&m, &d).unwrap();
        let mut prev = 1.0;
        for i in 1..20 {
            let g = 0.1 * i as f64;
            let v = variances_for_gain(&coupling, g, GainMapping::Exponential, 0.21).unwrap();
            assert!(v.squeezed < prev, "not monotone at g = {g}");
            prev = v.squeezed;
        }
    }

    #[test]
    fn calibration_matches_analytic_inversion() {
        let d = toy_decomposition(0.1);
        let m = basis_mode(0, "m0");
        let coupling = mode_coupling(&m, &d).unwrap();
        let eta = 0.21;
        let target_db = -0.35;
        let g = calibrate_gain(&coupling, target_db, GainMapping::Exponential, eta).unwrap();
        // analytic: η·e^{−2g} + (1−η) = 10^{target/10}
        let expected = -0.5 * ((from_db(target_db) - (1.0 - eta)) / eta).ln();
        assert_relative_eq!(g, expected, epsilon = 1e-10);
        // round trip
        let v = variances_for_gain(&coupling, g, GainMapping::Exponential, eta).unwrap();
        assert_relative_eq!(to_db(v.squeezed), target_db, epsilon = 1e-9);
        // unreachable target: deeper than the efficiency floor 1−η
        assert!(calibrate_gain(&coupling, to_db(1.0 - eta) - 1.0, GainMapping::Exponential, eta).is_err());
        assert!(calibrate_gain(&coupling, 0.5, GainMapping::Exponential, eta).is_err());
    }

    fn test_variances() -> QuadratureVariances {
        QuadratureVariances { squeezed: from_db(-0.35), antisqueezed: from_db(0.50) }
    }

    #[test]
    fn noiseless_trace_follows_the_phase_sweep() {
        let v = test_variances();
        let tr = synthesize_trace(&v, "HG0", 0.3, 2, 400, None, 7).unwrap();
        assert_eq!(tr.time_s.len(), 800);
        // θ = 0 at t = 0 ⇒ squeezed quadrature
        assert_relative_eq!(tr.variance_snu[0], v.squeezed, epsilon = 1e-12);
        // half a variance period ⇒ θ = π/2 ⇒ antisqueezed
        assert_relative_eq!(tr.variance_snu[200], v.antisqueezed, epsilon = 1e-10);
        // period duration 1/(2·rate)
        assert_relative_eq!(tr.time_s[400] - tr.time_s[0], 1.0 / 0.6, epsilon = 1e-12);
        // explicit formula spot check
        let i = 37;
        let theta = 2.0 * std::f64::consts::PI * 0.3 * tr.time_s[i];
        let expect = v.squeezed * theta.cos().powi(2) + v.antisqueezed * theta.sin().powi(2);
        assert_relative_eq!(tr.variance_snu[i], expect, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_extraction_is_exact() {
        let v = test_variances();
        let tr = synthesize_trace(&v, "HG0", 0.3, 4, 400, None, 7).unwrap();
        let e = extract_extrema(&tr).unwrap();
        assert_relative_eq!(e.squeezed_db, -0.35, epsilon = 1e-9);
        assert_relative_eq!(e.antisqueezed_db, 0.50, epsilon = 1e-9);
        assert!(e.squeezed_db_se < 1e-12);
        assert_eq!(e.periods, 4);
    }

    #[test]
    fn vacuum_trace_extracts_zero_decibels() {
        let v = QuadratureVariances { squeezed: 1.0, antisqueezed: 1.0 };
        let tr = synthesize_trace(&v, "vac", 0.3, 4, 400, None, 3).unwrap();
        let e = extract_extrema(&tr).unwrap();
        assert_relative_eq!(e.squeezed_db, 0.0, epsilon = 1e-10);
        assert_relative_eq!(e.antisqueezed_db, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn noisy_traces_are_seeded_and_reproducible() {
        let v = test_variances();
        let nm = NoiseModel { effective_samples: 50_000 };
        let a = synthesize_trace(&v, "HG0", 0.3, 4, 400, Some(&nm), 42).unwrap();
        let b = synthesize_trace(&v, "HG0", 0.3, 4, 400, Some(&nm), 42).unwrap();
        assert_eq!(a.variance_snu, b.variance_snu);
        let c = synthesize_trace(&v, "HG0", 0.3, 4, 400, Some(&nm), 43).unwrap();
        assert_ne!(a.variance_snu, c.variance_snu);
        // scatter statistics: mean ratio to the noiseless value ≈ 1 with
        // relative deviation ~ √(2/ν)/√n
        let clean = synthesize_trace(&v, "HG0", 0.3, 4, 400, None, 42).unwrap();
        let ratio: f64 = a
            .variance_snu
            .iter()
            .zip(&clean.variance_snu)
            .map(|(n, c)| n / c)
            .sum::<f64>()
            / a.variance_snu.len() as f64;
        assert!((ratio - 1.0).abs() < 1e-3, "mean noise ratio {ratio}");
    }

    #[test]
    fn noisy_extraction_recovers_truth_within_error_bars() {
        let v = test_variances();
        let nm = NoiseModel { effective_samples: 50_000 };
        let tr = synthesize_trace(&v, "HG0", 0.3, 4, 400, Some(&nm), 11).unwrap();
        let e = extract_extrema(&tr).unwrap();
        assert!(e.squeezed_db_se > 0.0);
        assert!(
            (e.squeezed_db - (-0.35)).abs() < 6.0 * e.squeezed_db_se.max(0.002),
            "squeezed {} ± {}",
            e.squeezed_db,
            e.squeezed_db_se
        );
        assert!(
            (e.antisqueezed_db - 0.50).abs() < 6.0 * e.antisqueezed_db_se.max(0.002),
            "antisqueezed {} ± {}",
            e.antisqueezed_db,
            e.antisqueezed_db_se
        );
    }

    #[test]
    fn harmonic_fit_beats_raw_extremes_under_noise() {
        // raw min/max of noisy samples are biased outward by extreme-value
        // statistics; the debiased harmonic fit must land closer to truth
        let v = test_variances();
        let nm = NoiseModel { effective_samples: 5_000 };
        let tr = synthesize_trace(&v, "HG0", 0.3, 4, 400, Some(&nm), 5).unwrap();
        let e = extract_extrema(&tr).unwrap();
        let raw_min_db = to_db(tr.variance_snu.iter().cloned().fold(f64::INFINITY, f64::min));
        let raw_max_db = to_db(tr.variance_snu.iter().cloned().fold(0.0, f64::max));
        assert!(
            (e.squeezed_db - (-0.35)).abs() < (raw_min_db - (-0.35)).abs(),
            "fit {} vs raw {}",
            e.squeezed_db,
            raw_min_db
        );
        assert!(
            (e.antisqueezed_db - 0.50).abs() < (raw_max_db - 0.50).abs(),
            "fit {} vs raw {}",
            e.antisqueezed_db,
            raw_max_db
        );
    }

    #[test]
    fn trace_validation_errors() {
        let v = test_variances();
        assert!(synthesize_trace(&v, "m", 0.0, 4, 400, None, 1).is_err());
        assert!(synthesize_trace(&v, "m", 0.3, 0, 400, None, 1).is_err());
        assert!(synthesize_trace(&v, "m", 0.3, 4, 4, None, 1).is_err());
        let mut tr = synthesize_trace(&v, "m", 0.3, 4, 400, None, 1).unwrap();
        tr.variance_snu.pop();
        assert!(extract_extrema(&tr).is_err());
    }
}
