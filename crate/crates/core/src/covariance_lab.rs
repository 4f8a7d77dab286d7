//! Quadrature covariance analysis: assemble X- and P-block covariance
//! matrices over a detection-mode basis from homodyne variance
//! measurements (diagonal from the modes themselves, off-diagonal from
//! normalized sum-mode measurements), diagonalize the blocks with
//! bootstrap error bars, and issue a multimode verdict.
//!
//! The X-P cross block is fixed at zero throughout (negligible pump chirp
//! regime); only the two symmetric blocks are stored and analyzed.

use crate::error::{Error, Result};
use crate::homodyne_sim::{GainMapping, HomodyneTrace, TraceProtocol, synthesize_trace,
                          extract_extrema, mode_coupling, variances_for_gain};
use crate::linalg::{C64, sym_eig};
use crate::mode_decomposition::{AnalysisMode, SqueezingDecomposition, overlaps, sum_mode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Where a set of covariance blocks came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Simulated,
    Ingested,
}

/// A measured (squeezed, antisqueezed) variance pair with standard errors,
/// in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub v_x: f64,
    pub v_x_se: f64,
    pub v_p: f64,
    pub v_p_se: f64,
}

impl VariancePair {
    /// Exact (noiseless) pair.
    pub fn exact(v_x: f64, v_p: f64) -> Self {
        VariancePair { v_x, v_x_se: 0.0, v_p, v_p_se: 0.0 }
    }
}

/// X and P covariance blocks over an ordered mode basis, with per-entry
/// standard errors. Matrices are exactly symmetric by construction and
/// include the vacuum (identity) contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlocks {
    pub basis_labels: Vec<String>,
    pub v_x: DMatrix<f64>,
    pub v_p: DMatrix<f64>,
    pub sigma_x: DMatrix<f64>,
    pub sigma_p: DMatrix<f64>,
    pub provenance: Provenance,
}

impl CovarianceBlocks {
    /// Basis size.
    pub fn dim(&self) -> usize {
        self.basis_labels.len()
    }

    /// True when every standard-error entry is zero (exact blocks).
    pub fn is_exact(&self) -> bool {
        self.sigma_x.iter().all(|s| *s == 0.0) && self.sigma_p.iter().all(|s| *s == 0.0)
    }

    fn validate(&self) -> Result<()> {
        let m = self.dim();
        for mat in [&self.v_x, &self.v_p, &self.sigma_x, &self.sigma_p] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Input(format!(
                    "covariance block shape {}×{} does not match {m} basis labels",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        for i in 0..m {
            if self.v_x[(i, i)] <= 0.0 || self.v_p[(i, i)] <= 0.0 {
                return Err(Error::Input(format!(
                    "non-positive diagonal variance for mode '{}'",
                    self.basis_labels[i]
                )));
            }
            for j in 0..i {
                if self.v_x[(i, j)] != self.v_x[(j, i)] || self.v_p[(i, j)] != self.v_p[(j, i)] {
                    return Err(Error::Input("covariance blocks must be exactly symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// Assemble covariance blocks from homodyne variance measurements.
///
/// Diagonals come straight from the per-mode variances. Off-diagonals use
/// the normalized-sum-mode identity
/// `Cov(Xᵢ, Xⱼ) = V[(Xᵢ+Xⱼ)/√2] − V[Xᵢ]/2 − V[Xⱼ]/2`
/// (same for P), with standard errors propagated in quadrature. `sums`
/// holds the sum-mode variance pair for each `(i, j)` with `i < j`; every
/// pair must be present.
pub fn covariance_from_measurements(
    basis_labels: &[String],
    diagonals: &[VariancePair],
    sums: &[((usize, usize), VariancePair)],
    provenance: Provenance,
) -> Result<CovarianceBlocks> {
    let m = basis_labels.len();
    if m == 0 {
        return Err(Error::Input("empty mode basis".into()));
    }
    if diagonals.len() != m {
        return Err(Error::Input(format!(
            "{} diagonal measurements for {m} basis modes",
            diagonals.len()
        )));
    }
    let mut v_x = DMatrix::<f64>::zeros(m, m);
    let mut v_p = DMatrix::<f64>::zeros(m, m);
    let mut sigma_x = DMatrix::<f64>::zeros(m, m);
    let mut sigma_p = DMatrix::<f64>::zeros(m, m);
    for (i, d) in diagonals.iter().enumerate() {
        if d.v_x <= 0.0 || d.v_p <= 0.0 {
            return Err(Error::Input(format!(
                "non-positive variance for mode '{}'",
                basis_labels[i]
            )));
        }
        v_x[(i, i)] = d.v_x;
        v_p[(i, i)] = d.v_p;
        sigma_x[(i, i)] = d.v_x_se;
        sigma_p[(i, i)] = d.v_p_se;
    }
    let mut seen = vec![false; m * m];
    for ((i, j), s) in sums {
        let (i, j) = (*i, *j);
        if i >= j || j >= m {
            return Err(Error::Input(format!(
                "sum-mode measurement for invalid pair ({i}, {j}); need i < j < {m}"
            )));
        }
        if seen[i * m + j] {
            return Err(Error::Input(format!("duplicate sum-mode measurement for pair ({i}, {j})")));
        }
        seen[i * m + j] = true;
        let (di, dj) = (&diagonals[i], &diagonals[j]);
        let cov_x = s.v_x - 0.5 * di.v_x - 0.5 * dj.v_x;
        let cov_p = s.v_p - 0.5 * di.v_p - 0.5 * dj.v_p;
        let se_x = (s.v_x_se.powi(2) + 0.25 * di.v_x_se.powi(2) + 0.25 * dj.v_x_se.powi(2)).sqrt();
        let se_p = (s.v_p_se.powi(2) + 0.25 * di.v_p_se.powi(2) + 0.25 * dj.v_p_se.powi(2)).sqrt();
        v_x[(i, j)] = cov_x;
        v_x[(j, i)] = cov_x;
        v_p[(i, j)] = cov_p;
        v_p[(j, i)] = cov_p;
        sigma_x[(i, j)] = se_x;
        sigma_x[(j, i)] = se_x;
        sigma_p[(i, j)] = se_p;
        sigma_p[(j, i)] = se_p;
    }
    let missing: Vec<String> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .filter(|(i, j)| !seen[i * m + j])
        .map(|(i, j)| format!("({}, {})", basis_labels[i], basis_labels[j]))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "incomplete basis: missing sum-mode measurements for pairs {}",
            missing.join(", ")
        )));
    }
    let blocks = CovarianceBlocks { basis_labels: basis_labels.to_vec(), v_x, v_p, sigma_x, sigma_p, provenance };
    blocks.validate()?;
    Ok(blocks)
}

/// Direct analytic covariance blocks (the internal oracle for the
/// trace-based path): with mode overlaps `c_ik = ⟨S_k, mode_i⟩`,
/// `V^X_ij = δ_ij + η·Σ_k Re(c_ik c̄_jk)·(f₋(g·Λ_k/Λ₀) − 1)`
/// and the analogous `f₊` form for the P block. Detection efficiency
/// scales covariances linearly because the admixed vacuum is independent
/// between mode measurements.
pub fn analytic_covariance(
    basis: &[AnalysisMode],
    decomp: &SqueezingDecomposition,
    mapping: GainMapping,
    efficiency: f64,
) -> Result<CovarianceBlocks> {
    validate_basis(basis)?;
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::Config(format!("efficiency {efficiency} outside [0, 1]")));
    }
    let m = basis.len();
    let n_modes = decomp.len();
    let lambda0 = decomp.lambdas[0];
    let mut c = DMatrix::<C64>::zeros(n_modes, m);
    for (i, mode) in basis.iter().enumerate() {
        c.set_column(i, &overlaps(mode, decomp)?);
    }
    let mut v_x = DMatrix::<f64>::identity(m, m);
    let mut v_p = DMatrix::<f64>::identity(m, m);
    for k in 0..n_modes {
        let r = if lambda0 > 0.0 { decomp.gain * decomp.lambdas[k] / lambda0 } else { 0.0 };
        let (f_sq, f_anti) = mapping.variances(r);
        for i in 0..m {
            for j in 0..=i {
                let w = (c[(k, i)] * c[(k, j)].conj()).re;
                v_x[(i, j)] += efficiency * w * (f_sq - 1.0);
                v_p[(i, j)] += efficiency * w * (f_anti - 1.0);
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            v_x[(j, i)] = v_x[(i, j)];
            v_p[(j, i)] = v_p[(i, j)];
        }
    }
    Ok(CovarianceBlocks {
        basis_labels: basis.iter().map(|b| b.label.clone()).collect(),
        sigma_x: DMatrix::zeros(m, m),
        sigma_p: DMatrix::zeros(m, m),
        v_x,
        v_p,
        provenance: Provenance::Simulated,
    })
}

fn validate_basis(basis: &[AnalysisMode]) -> Result<()> {
    if basis.is_empty() {
        return Err(Error::Input("empty mode basis".into()));
    }
    for (i, a) in basis.iter().enumerate() {
        let norm = a.vector.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!(
                "basis mode '{}' is not normalized (‖·‖ = {norm})",
                a.label
            )));
        }
        for b in basis.iter().take(i) {
            let ov = a.overlap(b).norm();
            if ov > 1e-8 {
                return Err(Error::Input(format!(
                    "basis modes '{}' and '{}' are not orthogonal (|⟨·,·⟩| = {ov:.2e}); \
                     the sum-mode covariance relation requires an orthogonal basis",
                    a.label, b.label
                )));
            }
        }
    }
    Ok(())
}

/// End-to-end covariance measurement: for every basis mode and every
/// pairwise normalized sum mode, synthesize a phase-sweep homodyne trace,
/// extract the variance extrema, and assemble the blocks via
/// [`covariance_from_measurements`]. With `protocol.noise = None` the
/// result matches [`analytic_covariance`] to machine precision.
///
/// Trace seeds derive deterministically from `seed` (one sub-seed per
/// measured mode, diagonals first, then pairs in row-major order).
pub fn simulate_covariance(
    basis: &[AnalysisMode],
    decomp: &SqueezingDecomposition,
    mapping: GainMapping,
    efficiency: f64,
    protocol: &TraceProtocol,
    seed: u64,
) -> Result<CovarianceBlocks> {
    simulate_covariance_with_traces(basis, decomp, mapping, efficiency, protocol, seed)
        .map(|(blocks, _)| blocks)
}

/// As [`simulate_covariance`], but also returns every synthesized trace
/// (diagonals in basis order, then pair sum-modes row-major) so the raw
/// measurement record can be exported and re-ingested.
pub fn simulate_covariance_with_traces(
    basis: &[AnalysisMode],
    decomp: &SqueezingDecomposition,
    mapping: GainMapping,
    efficiency: f64,
    protocol: &TraceProtocol,
    seed: u64,
) -> Result<(CovarianceBlocks, Vec<HomodyneTrace>)> {
    validate_basis(basis)?;
    let m = basis.len();
    let mut sub_seed = seed;
    let mut traces = Vec::with_capacity(m * (m + 1) / 2);
    let mut measure = |mode: &AnalysisMode, traces: &mut Vec<HomodyneTrace>| -> Result<VariancePair> {
        let coupling = mode_coupling(mode, decomp)?;
        let v = variances_for_gain(&coupling, decomp.gain, mapping, efficiency)?;
        let trace = synthesize_trace(
            &v,
            &mode.label,
            protocol.phase_rate_hz,
            protocol.periods,
            protocol.samples_per_period,
            protocol.noise.as_ref(),
            sub_seed,
        )?;
        sub_seed = sub_seed.wrapping_add(1);
        let e = extract_extrema(&trace)?;
        traces.push(trace);
        let (v_x, v_x_se) = e.squeezed_linear();
        let (v_p, v_p_se) = e.antisqueezed_linear();
        if protocol.noise.is_none() {
            // per-period scatter of an exact trace is rounding, not error
            Ok(VariancePair::exact(v_x, v_p))
        } else {
            Ok(VariancePair { v_x, v_x_se, v_p, v_p_se })
        }
    };
    let mut diagonals = Vec::with_capacity(m);
    for mode in basis {
        diagonals.push(measure(mode, &mut traces)?);
    }
    let mut sums = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let s = sum_mode(&basis[i], &basis[j])?;
            sums.push(((i, j), measure(&s, &mut traces)?));
        }
    }
    let labels: Vec<String> = basis.iter().map(|b| b.label.clone()).collect();
    let blocks = covariance_from_measurements(&labels, &diagonals, &sums, Provenance::Simulated)?;
    if protocol.noise.is_none() {
        // uncertainty-principle sanity on exact blocks: V^X + V^P ⪰ 2·I
        let sum = &blocks.v_x + &blocks.v_p - DMatrix::<f64>::identity(m, m) * 2.0;
        let (eigs, _) = sym_eig(&sum);
        if eigs[0] < -1e-9 {
            return Err(Error::Numerical(format!(
                "noiseless covariance blocks violate the uncertainty bound: min eig(V_X + V_P − 2I) = {}",
                eigs[0]
            )));
        }
    }
    Ok((blocks, traces))
}

/// Eigendecomposition of both covariance blocks with bootstrap errors.
///
/// X eigenvalues ascend (most squeezed first); P eigenvalues descend
/// (most antisqueezed first), so index k pairs the squeezed direction
/// with its antisqueezed partner. Eigenvector signs are fixed by making
/// each vector's largest-magnitude component positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEigenanalysis {
    pub basis_labels: Vec<String>,
    /// Ascending eigenvalues of the X block.
    pub x_eigenvalues: Vec<f64>,
    /// Descending eigenvalues of the P block.
    pub p_eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, same order as the eigenvalues.
    pub x_eigenvectors: DMatrix<f64>,
    pub p_eigenvectors: DMatrix<f64>,
    /// Bootstrap standard errors (zero when the blocks are exact).
    pub x_value_sigma: Vec<f64>,
    pub p_value_sigma: Vec<f64>,
    pub x_vector_sigma: DMatrix<f64>,
    pub p_vector_sigma: DMatrix<f64>,
    /// Bootstrap rounds actually performed (0 for exact blocks).
    pub bootstrap_rounds: u32,
}

/// Sorted symmetric eigendecomposition with the block's ordering
/// convention and deterministic signs.
fn block_eig(mat: &DMatrix<f64>, descending: bool) -> (Vec<f64>, DMatrix<f64>) {
    let (vals, vecs) = sym_eig(mat);
    let m = vals.len();
    let order: Vec<usize> = if descending { (0..m).rev().collect() } else { (0..m).collect() };
    let mut values = Vec::with_capacity(m);
    let mut vectors = DMatrix::<f64>::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        values.push(vals[src]);
        let mut col = vecs.column(src).into_owned();
        let pivot = col.iter().cloned().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Deterministic sub-seed for bootstrap round `round` (SplitMix64 step).
fn round_seed(seed: u64, round: u64) -> u64 {
    let mut z = seed.wrapping_add(round.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Diagonalize both blocks; when the blocks carry nonzero standard errors,
/// run a parametric bootstrap (`rounds` resamples of each independent
/// entry from a normal with its standard error, mirrored to keep exact
/// symmetry, each round re-diagonalized with a deterministic sub-seed) and
/// report component-wise standard deviations for eigenvalues and
/// eigenvector components.
pub fn diagonalize_blocks(
    blocks: &CovarianceBlocks,
    bootstrap_rounds: u32,
    seed: u64,
) -> Result<BlockEigenanalysis> {
    blocks.validate()?;
    let m = blocks.dim();
    let (x_eigenvalues, x_eigenvectors) = block_eig(&blocks.v_x, false);
    let (p_eigenvalues, p_eigenvectors) = block_eig(&blocks.v_p, true);
    let mut analysis = BlockEigenanalysis {
        basis_labels: blocks.basis_labels.clone(),
        x_eigenvalues,
        p_eigenvalues,
        x_eigenvectors,
        p_eigenvectors,
        x_value_sigma: vec![0.0; m],
        p_value_sigma: vec![0.0; m],
        x_vector_sigma: DMatrix::zeros(m, m),
        p_vector_sigma: DMatrix::zeros(m, m),
        bootstrap_rounds: 0,
    };
    if blocks.is_exact() {
        return Ok(analysis);
    }
    if bootstrap_rounds < 2 {
        return Err(Error::Input(format!(
            "blocks carry standard errors; bootstrap needs ≥ 2 rounds, got {bootstrap_rounds}"
        )));
    }
    let mut acc = BootstrapAccumulator::new(m);
    for round in 0..bootstrap_rounds as u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(round_seed(seed, round));
        let vx = resample_symmetric(&blocks.v_x, &blocks.sigma_x, &mut rng)?;
        let vp = resample_symmetric(&blocks.v_p, &blocks.sigma_p, &mut rng)?;
        let (xv, xm) = block_eig(&vx, false);
        let (pv, pm) = block_eig(&vp, true);
        acc.push(&xv, &xm, &pv, &pm);
    }
    let (xvs, xms, pvs, pms) = acc.finish();
    analysis.x_value_sigma = xvs;
    analysis.x_vector_sigma = xms;
    analysis.p_value_sigma = pvs;
    analysis.p_vector_sigma = pms;
    analysis.bootstrap_rounds = bootstrap_rounds;
    Ok(analysis)
}

fn resample_symmetric(
    mean: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<DMatrix<f64>> {
    let m = mean.nrows();
    let mut out = mean.clone();
    for i in 0..m {
        for j in i..m {
            let sd = sigma[(i, j)];
            if sd > 0.0 {
                let dist = Normal::new(mean[(i, j)], sd)
                    .map_err(|e| Error::Numerical(format!("bootstrap resampling: {e}")))?;
                let v = dist.sample(rng);
                out[(i, j)] = v;
                out[(j, i)] = v;
            } else if sd < 0.0 || !sd.is_finite() {
                return Err(Error::Input(format!("invalid standard error {sd} at ({i}, {j})")));
            }
        }
    }
    // keep diagonals physical under resampling
    for i in 0..m {
        out[(i, i)] = out[(i, i)].max(f64::MIN_POSITIVE);
    }
    let _ = rng.next_u64(); // decouple subsequent draws between blocks
    Ok(out)
}

/// Streaming mean/variance over bootstrap rounds (Welford).
struct BootstrapAccumulator {
    n: f64,
    xv_mean: DVector<f64>,
    xv_m2: DVector<f64>,
    xm_mean: DMatrix<f64>,
    xm_m2: DMatrix<f64>,
    pv_mean: DVector<f64>,
    pv_m2: DVector<f64>,
    pm_mean: DMatrix<f64>,
    pm_m2: DMatrix<f64>,
}

impl BootstrapAccumulator {
    fn new(m: usize) -> Self {
        BootstrapAccumulator {
            n: 0.0,
            xv_mean: DVector::zeros(m),
            xv_m2: DVector::zeros(m),
            xm_mean: DMatrix::zeros(m, m),
            xm_m2: DMatrix::zeros(m, m),
            pv_mean: DVector::zeros(m),
            pv_m2: DVector::zeros(m),
            pm_mean: DMatrix::zeros(m, m),
            pm_m2: DMatrix::zeros(m, m),
        }
    }

    fn push(&mut self, xv: &[f64], xm: &DMatrix<f64>, pv: &[f64], pm: &DMatrix<f64>) {
        self.n += 1.0;
        let n = self.n;
        let upd_v = |mean: &mut DVector<f64>, m2: &mut DVector<f64>, vals: &[f64]| {
            for (i, &v) in vals.iter().enumerate() {
                let d = v - mean[i];
                mean[i] += d / n;
                m2[i] += d * (v - mean[i]);
            }
        };
        upd_v(&mut self.xv_mean, &mut self.xv_m2, xv);
        upd_v(&mut self.pv_mean, &mut self.pv_m2, pv);
        let upd_m = |mean: &mut DMatrix<f64>, m2: &mut DMatrix<f64>, vals: &DMatrix<f64>| {
            for (m_e, (m2_e, &v)) in mean.iter_mut().zip(m2.iter_mut().zip(vals.iter())) {
                let d = v - *m_e;
                *m_e += d / n;
                *m2_e += d * (v - *m_e);
            }
        };
        upd_m(&mut self.xm_mean, &mut self.xm_m2, xm);
        upd_m(&mut self.pm_mean, &mut self.pm_m2, pm);
    }

    fn finish(self) -> (Vec<f64>, DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
        let denom = (self.n - 1.0).max(1.0);
        let sd_v = |m2: DVector<f64>| m2.iter().map(|x| (x / denom).sqrt()).collect::<Vec<f64>>();
        let sd_m = |m2: DMatrix<f64>| m2.map(|x| (x / denom).sqrt());
        (sd_v(self.xv_m2), sd_m(self.xm_m2), sd_v(self.pv_m2), sd_m(self.pm_m2))
    }
}

/// Per-block significance counts and the final verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultimodeVerdict {
    /// X-block eigenvalues differing from 1 beyond the threshold.
    pub significant_x: usize,
    /// P-block eigenvalues differing from 1 beyond the threshold.
    pub significant_p: usize,
    pub threshold_sigmas: f64,
    /// True iff at least one block has ≥ 2 significant eigenvalues.
    pub multimode: bool,
}

/// Absolute floor under the significance test so exact-arithmetic blocks
/// (σ = 0) don't flag pure rounding noise around 1.
pub const VERDICT_ABS_FLOOR: f64 = 1e-9;

/// Count eigenvalues significantly different from the vacuum level 1
/// (|λ − 1| > threshold·σ_λ, with a 10⁻⁹ absolute floor for exact
/// blocks); the state is multimode iff some block has at least two.
pub fn multimode_verdict(analysis: &BlockEigenanalysis, threshold_sigmas: f64) -> Result<MultimodeVerdict> {
    if threshold_sigmas <= 0.0 || !threshold_sigmas.is_finite() {
        return Err(Error::Config(format!("significance threshold {threshold_sigmas} must be positive")));
    }
    let count = |vals: &[f64], sigmas: &[f64]| {
        vals.iter()
            .zip(sigmas)
            .filter(|(v, s)| (**v - 1.0).abs() > threshold_sigmas * **s + VERDICT_ABS_FLOOR)
            .count()
    };
    let significant_x = count(&analysis.x_eigenvalues, &analysis.x_value_sigma);
    let significant_p = count(&analysis.p_eigenvalues, &analysis.p_value_sigma);
    Ok(MultimodeVerdict {
        significant_x,
        significant_p,
        threshold_sigmas,
        multimode: significant_x >= 2 || significant_p >= 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homodyne_sim::NoiseModel;
    use crate::linalg::matmul;
    use crate::mode_decomposition::{SpatialPart, takagi};
    use crate::pump_kernel::{GainKernel, KernelMatrix, SpatioSpectralGrid};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Decomposition of a diagonal kernel with the given Takagi values.
    fn toy_decomposition(lambdas: &[f64], gain: f64) -> SqueezingDecomposition {
        let n = lambdas.len();
        let grid = SpatioSpectralGrid::new((0..n).map(|i| i as f64).collect(), vec![0.0]).unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(lambdas));
        takagi(&GainKernel { grid, matrix: KernelMatrix::Real(m), gain }).unwrap()
    }

    fn basis_mode(n: usize, i: usize, label: &str) -> AnalysisMode {
        let mut v = DVector::<C64>::zeros(n);
        v[i] = C64::new(1.0, 0.0);
        AnalysisMode { label: label.into(), vector: v, spectral: None, spatial: SpatialPart::Full }
    }

    fn superposition(n: usize, parts: &[(usize, f64)], label: &str) -> AnalysisMode {
        let mut v = DVector::<C64>::zeros(n);
        for &(i, w) in parts {
            v[i] = C64::new(w, 0.0);
        }
        let norm = v.norm();
        v /= C64::new(norm, 0.0);
        AnalysisMode { label: label.into(), vector: v, spectral: None, spatial: SpatialPart::Full }
    }

    #[test]
    fn uncorrelated_modes_give_zero_off_diagonal() {
        // sum-mode variance exactly (Vi + Vj)/2 ⇒ covariance 0
        let diag = [VariancePair::exact(0.8, 1.3), VariancePair::exact(0.9, 1.2)];
        let sums = [((0, 1), VariancePair::exact(0.85, 1.25))];
        let b = covariance_from_measurements(&labels(&["a", "b"]), &diag, &sums, Provenance::Ingested).unwrap();
        assert!(b.v_x[(0, 1)].abs() < 1e-15);
        assert!(b.v_p[(0, 1)].abs() < 1e-15);
        assert_eq!(b.v_x[(0, 0)], 0.8);
        assert_eq!(b.provenance, Provenance::Ingested);
    }

    #[test]
    fn split_s0_pair_matches_brute_force_gaussian_propagation() {
        // two modes, each overlapping the dominant squeezed mode with
        // amplitude 1/√2 (remainder in orthogonal vacuum), r = 0.35, η = 1.
        // Frozen oracle: direct 2-mode Gaussian covariance construction.
        const COV_X: f64 = -0.25170734810429524;
        const COV_P: f64 = 0.50687635373523826;
        const VA_X: f64 = 0.74829265189570476;
        const VA_P: f64 = 1.5068763537352383;
        const VSUM_X: f64 = 0.49658530379140951;
        const VSUM_P: f64 = 2.0137527074704765;
        let diag = [VariancePair::exact(VA_X, VA_P), VariancePair::exact(VA_X, VA_P)];
        let sums = [((0, 1), VariancePair::exact(VSUM_X, VSUM_P))];
        let b = covariance_from_measurements(&labels(&["a", "b"]), &diag, &sums, Provenance::Simulated).unwrap();
        assert_relative_eq!(b.v_x[(0, 1)], COV_X, epsilon = 1e-14);
        assert_relative_eq!(b.v_p[(0, 1)], COV_P, epsilon = 1e-14);
        // same state through the analytic projector: modes (S₀ ± S₁)/√2 of a
        // two-mode decomposition where only S₀ squeezes (Λ₁ = 0 ⇒ vacuum)
        let d = toy_decomposition(&[1.0, 0.0], 0.35);
        let basis = [
            superposition(2, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0), (1, -1.0)], "b"),
        ];
        let a = analytic_covariance(&basis, &d, GainMapping::Exponential, 1.0).unwrap();
        assert_relative_eq!(a.v_x[(0, 1)], COV_X, epsilon = 1e-14);
        assert_relative_eq!(a.v_p[(0, 1)], COV_P, epsilon = 1e-14);
        assert_relative_eq!(a.v_x[(0, 0)], VA_X, epsilon = 1e-14);
        assert_relative_eq!(a.v_p[(1, 1)], VA_P, epsilon = 1e-14);
    }

    #[test]
    fn assembly_round_trips_synthetic_gaussian_states() {
        // any symmetric covariance with unit-compatible diagonals survives
        // measure → assemble exactly
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for m in [2usize, 3, 5] {
            // random symmetric blocks with dominant positive diagonal
            let mut vx = DMatrix::<f64>::zeros(m, m);
            let mut vp = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    let a = 0.3 * next();
                    let b = 0.3 * next();
                    vx[(i, j)] = a;
                    vx[(j, i)] = a;
                    vp[(i, j)] = b;
                    vp[(j, i)] = b;
                }
                vx[(i, i)] = 1.0 + next().abs();
                vp[(i, i)] = 1.0 + next().abs();
            }
            let names: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
            let diag: Vec<VariancePair> =
                (0..m).map(|i| VariancePair::exact(vx[(i, i)], vp[(i, i)])).collect();
            let sums: Vec<((usize, usize), VariancePair)> = (0..m)
                .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                .map(|(i, j)| {
                    // exact sum-mode variances implied by the true covariance
                    let sx = 0.5 * vx[(i, i)] + 0.5 * vx[(j, j)] + vx[(i, j)];
                    let sp = 0.5 * vp[(i, i)] + 0.5 * vp[(j, j)] + vp[(i, j)];
                    ((i, j), VariancePair::exact(sx, sp))
                })
                .collect();
            let b = covariance_from_measurements(&names, &diag, &sums, Provenance::Simulated).unwrap();
            assert_relative_eq!(b.v_x, vx, epsilon = 1e-14);
            assert_relative_eq!(b.v_p, vp, epsilon = 1e-14);
        }
    }

    #[test]
    fn missing_and_invalid_pairs_are_rejected() {
        let diag = [VariancePair::exact(1.0, 1.0); 3];
        let names = labels(&["a", "b", "c"]);
        let sums = [((0, 1), VariancePair::exact(1.0, 1.0))];
        let err = covariance_from_measurements(&names, &diag, &sums, Provenance::Ingested).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(a, c)") && msg.contains("(b, c)"), "{msg}");
        let bad = [((1, 1), VariancePair::exact(1.0, 1.0))];
        assert!(covariance_from_measurements(&names, &diag, &bad, Provenance::Ingested).is_err());
        let dup = [
            ((0, 1), VariancePair::exact(1.0, 1.0)),
            ((0, 1), VariancePair::exact(1.0, 1.0)),
        ];
        assert!(covariance_from_measurements(&names, &diag, &dup, Provenance::Ingested).is_err());
    }

    #[test]
    fn zero_gain_simulation_gives_identity_blocks() {
        let d = toy_decomposition(&[1.0, 0.5], 0.0);
        let basis = [basis_mode(2, 0, "a"), basis_mode(2, 1, "b")];
        let b = simulate_covariance(
            &basis,
            &d,
            GainMapping::Exponential,
            0.21,
            &TraceProtocol::default(),
            7,
        )
        .unwrap();
        assert_relative_eq!(b.v_x, DMatrix::<f64>::identity(2, 2), epsilon = 1e-10);
        assert_relative_eq!(b.v_p, DMatrix::<f64>::identity(2, 2), epsilon = 1e-10);
    }

    #[test]
    fn eigenbasis_simulation_is_diagonal() {
        let g = 0.4;
        let d = toy_decomposition(&[1.0, 0.5], g);
        let basis = [basis_mode(2, 0, "S0"), basis_mode(2, 1, "S1")];
        let b = simulate_covariance(&basis, &d, GainMapping::Exponential, 1.0, &TraceProtocol::default(), 7)
            .unwrap();
        assert_relative_eq!(b.v_x[(0, 0)], (-2.0 * g).exp(), epsilon = 1e-9);
        assert_relative_eq!(b.v_x[(1, 1)], (-g).exp(), epsilon = 1e-9);
        assert_relative_eq!(b.v_p[(0, 0)], (2.0 * g).exp(), epsilon = 1e-9);
        assert!(b.v_x[(0, 1)].abs() < 1e-9);
        assert!(b.v_p[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn noiseless_simulation_matches_the_analytic_projector() {
        let d = toy_decomposition(&[1.0, 0.7, 0.3], 0.5);
        let basis = [
            superposition(3, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(3, &[(0, 1.0), (1, -1.0)], "b"),
            basis_mode(3, 2, "c"),
        ];
        for mapping in [GainMapping::Exponential, GainMapping::Linearized] {
            let sim = simulate_covariance(&basis, &d, mapping, 0.21, &TraceProtocol::default(), 3).unwrap();
            let ana = analytic_covariance(&basis, &d, mapping, 0.21).unwrap();
            assert_relative_eq!(sim.v_x, ana.v_x, epsilon = 1e-9);
            assert_relative_eq!(sim.v_p, ana.v_p, epsilon = 1e-9);
        }
    }

    #[test]
    fn noisy_simulation_converges_to_the_analytic_projector() {
        let d = toy_decomposition(&[1.0, 0.7], 0.5);
        let basis = [
            superposition(2, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0), (1, -1.0)], "b"),
        ];
        let ana = analytic_covariance(&basis, &d, GainMapping::Exponential, 0.21).unwrap();
        let deviation = |samples: u64, seed: u64| -> f64 {
            let protocol = TraceProtocol {
                noise: Some(NoiseModel { effective_samples: samples }),
                ..TraceProtocol::default()
            };
            let sim =
                simulate_covariance(&basis, &d, GainMapping::Exponential, 0.21, &protocol, seed).unwrap();
            (&sim.v_x - &ana.v_x).abs().max().max((&sim.v_p - &ana.v_p).abs().max())
        };
        // statistical convergence: deviation shrinks roughly as 1/√samples
        let d4 = deviation(10_000, 11);
        let d6 = deviation(1_000_000, 11);
        assert!(d6 < d4, "deviation did not shrink: {d4} → {d6}");
        assert!(d6 < 2e-3, "deviation at 10⁶ samples: {d6}");
        // and the noisy estimates carry nonzero error bars
        let protocol = TraceProtocol {
            noise: Some(NoiseModel { effective_samples: 1_000_000 }),
            ..TraceProtocol::default()
        };
        let sim = simulate_covariance(&basis, &d, GainMapping::Exponential, 0.21, &protocol, 11).unwrap();
        assert!(sim.sigma_x[(0, 0)] > 0.0);
        assert!(sim.sigma_x[(0, 1)] > 0.0);
    }

    #[test]
    fn non_orthogonal_basis_is_rejected() {
        let d = toy_decomposition(&[1.0, 0.5], 0.3);
        let basis = [
            superposition(2, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0)], "b"),
        ];
        assert!(matches!(
            simulate_covariance(&basis, &d, GainMapping::Exponential, 1.0, &TraceProtocol::default(), 1),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn identity_blocks_diagonalize_to_vacuum_and_fail_the_verdict() {
        let m = 3;
        let blocks = CovarianceBlocks {
            basis_labels: labels(&["a", "b", "c"]),
            v_x: DMatrix::identity(m, m),
            v_p: DMatrix::identity(m, m),
            sigma_x: DMatrix::zeros(m, m),
            sigma_p: DMatrix::zeros(m, m),
            provenance: Provenance::Simulated,
        };
        let a = diagonalize_blocks(&blocks, 0, 1).unwrap();
        for v in a.x_eigenvalues.iter().chain(&a.p_eigenvalues) {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
        assert_eq!(a.bootstrap_rounds, 0);
        let verdict = multimode_verdict(&a, 3.0).unwrap();
        assert_eq!(verdict.significant_x, 0);
        assert_eq!(verdict.significant_p, 0);
        assert!(!verdict.multimode);
    }

    #[test]
    fn eigensystem_reconstructs_and_orders_blocks() {
        let d = toy_decomposition(&[1.0, 0.6], 0.5);
        let basis = [
            superposition(2, &[(0, 3.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0), (1, -3.0)], "b"),
        ];
        let blocks = analytic_covariance(&basis, &d, GainMapping::Exponential, 1.0).unwrap();
        let a = diagonalize_blocks(&blocks, 0, 1).unwrap();
        // ordering conventions
        assert!(a.x_eigenvalues[0] <= a.x_eigenvalues[1]);
        assert!(a.p_eigenvalues[0] >= a.p_eigenvalues[1]);
        // orthonormal eigenvectors reconstruct each block
        for (vals, vecs, block) in [
            (&a.x_eigenvalues, &a.x_eigenvectors, &blocks.v_x),
            (&a.p_eigenvalues, &a.p_eigenvectors, &blocks.v_p),
        ] {
            let gram = matmul(&vecs.transpose(), vecs);
            assert_relative_eq!(gram, DMatrix::<f64>::identity(2, 2), epsilon = 1e-12);
            let lam = DMatrix::from_diagonal(&DVector::from_row_slice(vals));
            let rec = matmul(&matmul(vecs, &lam), &vecs.transpose());
            assert_relative_eq!(rec, *block, epsilon = 1e-12);
        }
        // sign convention: largest-magnitude component positive
        for k in 0..2 {
            for vecs in [&a.x_eigenvectors, &a.p_eigenvectors] {
                let col = vecs.column(k);
                let pivot = col.iter().cloned().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
                assert!(pivot > 0.0);
            }
        }
        // basis spans both eigenmodes at η = 1 ⇒ X/P eigenvalues reciprocal
        for k in 0..2 {
            assert_relative_eq!(a.x_eigenvalues[k] * a.p_eigenvalues[k], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigenvalues_are_invariant_under_basis_permutation() {
        let d = toy_decomposition(&[1.0, 0.7, 0.4], 0.6);
        let b0 = [
            superposition(3, &[(0, 1.0), (1, 1.0), (2, 1.0)], "a"),
            superposition(3, &[(0, 1.0), (1, -1.0)], "b"),
            superposition(3, &[(0, 1.0), (1, 1.0), (2, -2.0)], "c"),
        ];
        let b1 = [b0[2].clone(), b0[0].clone(), b0[1].clone()];
        let a0 = diagonalize_blocks(&analytic_covariance(&b0, &d, GainMapping::Exponential, 0.8).unwrap(), 0, 1)
            .unwrap();
        let a1 = diagonalize_blocks(&analytic_covariance(&b1, &d, GainMapping::Exponential, 0.8).unwrap(), 0, 1)
            .unwrap();
        for k in 0..3 {
            assert_relative_eq!(a0.x_eigenvalues[k], a1.x_eigenvalues[k], epsilon = 1e-12);
            assert_relative_eq!(a0.p_eigenvalues[k], a1.p_eigenvalues[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_calibrated() {
        let d = toy_decomposition(&[1.0, 0.7], 0.5);
        let basis = [
            superposition(2, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0), (1, -1.0)], "b"),
        ];
        let protocol = TraceProtocol {
            noise: Some(NoiseModel { effective_samples: 50_000 }),
            ..TraceProtocol::default()
        };
        let blocks =
            simulate_covariance(&basis, &d, GainMapping::Exponential, 0.21, &protocol, 5).unwrap();
        assert!(diagonalize_blocks(&blocks, 1, 9).is_err()); // errors requested, too few rounds
        let a = diagonalize_blocks(&blocks, 1000, 9).unwrap();
        let b = diagonalize_blocks(&blocks, 1000, 9).unwrap();
        assert_eq!(a.x_value_sigma, b.x_value_sigma);
        assert_eq!(a.x_vector_sigma, b.x_vector_sigma);
        let c = diagonalize_blocks(&blocks, 1000, 10).unwrap();
        assert_ne!(a.x_value_sigma, c.x_value_sigma);
        // eigenvalue error bars live on the scale of the entry errors
        let entry_scale = blocks.sigma_x.max();
        for s in &a.x_value_sigma {
            assert!(*s > 0.0 && *s < 10.0 * entry_scale, "sigma {s} vs entries {entry_scale}");
        }
    }

    #[test]
    fn verdicts_distinguish_single_mode_from_multimode() {
        // rank-1 kernel: only one squeezed direction ⇒ not multimode
        let d1 = toy_decomposition(&[1.0, 0.0], 0.6);
        let basis = [
            superposition(2, &[(0, 1.0), (1, 1.0)], "a"),
            superposition(2, &[(0, 1.0), (1, -1.0)], "b"),
        ];
        let a1 = diagonalize_blocks(&analytic_covariance(&basis, &d1, GainMapping::Exponential, 1.0).unwrap(), 0, 1)
            .unwrap();
        let v1 = multimode_verdict(&a1, 3.0).unwrap();
        assert_eq!(v1.significant_x, 1);
        assert_eq!(v1.significant_p, 1);
        assert!(!v1.multimode);
        // two squeezed directions ⇒ multimode
        let d2 = toy_decomposition(&[1.0, 0.7], 0.6);
        let a2 = diagonalize_blocks(&analytic_covariance(&basis, &d2, GainMapping::Exponential, 1.0).unwrap(), 0, 1)
            .unwrap();
        let v2 = multimode_verdict(&a2, 3.0).unwrap();
        assert_eq!(v2.significant_x, 2);
        assert!(v2.multimode);
        assert!(multimode_verdict(&a2, 0.0).is_err());
    }
}
