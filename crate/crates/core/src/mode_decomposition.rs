//! Extraction of independent squeezing modes from the gain kernel, and
//! construction of the detection modes used by the homodyne analysis.
//!
//! A complex symmetric kernel `K = K^T` factorizes as `K = U Λ U^T`
//! (Autonne–Takagi) with `U` unitary and `Λ ≥ 0` diagonal. The columns of
//! `U` are the joint spatio-spectral mode functions that squeeze
//! independently; `Λ_k/Λ_0` sets the relative squeezing strength of mode k.

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::pump_kernel::{GainKernel, KernelMatrix, SpatioSpectralGrid};
use nalgebra::{DMatrix, DVector};

/// Relative gap below which neighboring Takagi values are treated as one
/// degenerate block for deterministic basis fixing. Tight enough that
/// rotating a block cannot move the reconstruction residual above the
/// 10⁻¹⁰ identity tolerance.
const DEGENERACY_REL_TOL: f64 = 1e-12;

/// Blocks whose Takagi value is below this fraction of Λ₀ are left in the
/// backend's basis: they carry no squeezing weight, and Gram-Schmidt over a
/// long near-zero tail would amplify numerical noise into the mode basis.
const CANONICALIZE_FLOOR_REL: f64 = 1e-6;

/// Result of the Takagi factorization: `modes` holds the columns of `U`
/// (flattened on the kernel's grid), `lambdas` the matching Takagi values in
/// descending order. `gain` is carried over from the kernel so downstream
/// squeezing parameters can be formed as `gain · Λ_k/Λ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingDecomposition {
    pub modes: DMatrix<C64>,
    pub lambdas: DVector<f64>,
    pub gain: f64,
    /// Fraction of the kernel's squared Frobenius weight dropped by
    /// truncation; 0 for a full decomposition.
    pub discarded_weight: f64,
}

impl SqueezingDecomposition {
    /// Number of retained modes.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Λ_k/Λ_0; 0 when the leading value vanishes.
    pub fn normalized_lambda(&self, k: usize) -> f64 {
        if self.lambdas[0] > 0.0 { self.lambdas[k] / self.lambdas[0] } else { 0.0 }
    }

    /// Drop modes with `Λ_k ≤ rel_threshold · Λ_0`, accounting the removed
    /// squared weight. The full decomposition stays untouched.
    pub fn truncated(&self, rel_threshold: f64) -> SqueezingDecomposition {
        if self.is_empty() {
            return self.clone();
        }
        let cutoff = rel_threshold * self.lambdas[0];
        let keep = self.lambdas.iter().take_while(|&&l| l > cutoff).count().max(1);
        let total: f64 = self.lambdas.iter().map(|l| l * l).sum();
        let kept: f64 = self.lambdas.iter().take(keep).map(|l| l * l).sum();
        SqueezingDecomposition {
            modes: self.modes.columns(0, keep).into_owned(),
            lambdas: DVector::from_iterator(keep, self.lambdas.iter().take(keep).copied()),
            gain: self.gain,
            discarded_weight: self.discarded_weight + if total > 0.0 { (total - kept) / total } else { 0.0 },
        }
    }

    /// Residual ‖K − UΛU^T‖ / ‖K‖ against a kernel matrix (Frobenius).
    pub fn reconstruction_residual(&self, matrix: &KernelMatrix) -> f64 {
        let n = matrix.dim();
        let k = self.len();
        // UΛ U^T  computed as (U·Λ)·U^T
        let mut ul = self.modes.clone();
        for j in 0..k {
            let lam = C64::new(self.lambdas[j], 0.0);
            for i in 0..n {
                ul[(i, j)] *= lam;
            }
        }
        let recon = linalg::matmul_complex(&ul, &self.modes.transpose());
        let norm = matrix.norm();
        let mut diff2 = 0.0;
        for j in 0..n {
            for i in 0..n {
                diff2 += (recon[(i, j)] - matrix.get(i, j)).norm_sqr();
            }
        }
        if norm > 0.0 { diff2.sqrt() / norm } else { diff2.sqrt() }
    }

    /// Largest deviation of `UᴴU` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.len();
        let gram = linalg::matmul_complex(&self.modes.adjoint(), &self.modes);
        let mut worst = 0.0_f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                worst = worst.max((gram[(i, j)] - target).norm());
            }
        }
        worst
    }
}

/// Autonne–Takagi factorization of the (symmetric) gain kernel.
///
/// Returns the full decomposition — all `N` modes — so the reconstruction
/// identity holds to numerical precision; use
/// [`SqueezingDecomposition::truncated`] to discard negligible modes.
///
/// Determinism: degenerate Takagi blocks above the squeezing-relevance floor
/// are rotated onto a canonical basis (Gram–Schmidt against the standard
/// grid directions in index order) and every mode's global sign is fixed by
/// making its largest-magnitude component positive (real part, or imaginary
/// part when the real part vanishes). Two runs on the same kernel give
/// identical output.
pub fn takagi(kernel: &GainKernel) -> Result<SqueezingDecomposition> {
    let asym = kernel.matrix.max_asymmetry();
    let scale = kernel.matrix.norm();
    if scale > 0.0 && asym > 1e-12 * scale {
        return Err(Error::Input(format!(
            "kernel is not symmetric: max|K_ij − K_ji| = {asym:e} exceeds tolerance"
        )));
    }
    let (mut modes, mut lambdas) = match &kernel.matrix {
        KernelMatrix::Real(m) => takagi_real(m),
        KernelMatrix::Complex(m) => takagi_complex(m)?,
    };
    sort_descending(&mut modes, &mut lambdas);
    canonicalize_degenerate_blocks(&mut modes, &lambdas);
    fix_signs(&mut modes);
    let decomp = SqueezingDecomposition {
        modes,
        lambdas,
        gain: kernel.gain,
        discarded_weight: 0.0,
    };
    let defect = decomp.orthonormality_defect();
    if defect > 1e-8 {
        return Err(Error::Numerical(format!(
            "mode basis lost orthonormality (defect {defect:e})"
        )));
    }
    Ok(decomp)
}

/// Real symmetric path: eigenvectors of K are Takagi modes up to a phase.
/// A negative eigenvalue −σ with eigenvector v yields the Takagi pair
/// (σ, i·v), since (i·v)·σ·(i·v)^T = −σ·v·v^T.
fn takagi_real(m: &DMatrix<f64>) -> (DMatrix<C64>, DVector<f64>) {
    let (eigvals, eigvecs) = linalg::sym_eig(m);
    let n = m.nrows();
    let mut modes = DMatrix::<C64>::zeros(n, n);
    let mut lambdas = DVector::<f64>::zeros(n);
    for k in 0..n {
        let lam = eigvals[k];
        lambdas[k] = lam.abs();
        if lam >= 0.0 {
            for i in 0..n {
                modes[(i, k)] = C64::new(eigvecs[(i, k)], 0.0);
            }
        } else {
            for i in 0..n {
                modes[(i, k)] = C64::new(0.0, eigvecs[(i, k)]);
            }
        }
    }
    (modes, lambdas)
}

/// Complex symmetric path via the real augmentation: with K = X + iY,
/// the real symmetric matrix M = [[X, Y], [Y, −X]] has spectrum ±Λ, and an
/// eigenvector [a; b] at +λ gives the Takagi mode u = a + i·b.
fn takagi_complex(m: &DMatrix<C64>) -> Result<(DMatrix<C64>, DVector<f64>)> {
    let n = m.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let v = m[(i, j)];
            aug[(i, j)] = v.re;
            aug[(i, j + n)] = v.im;
            aug[(i + n, j)] = v.im;
            aug[(i + n, j + n)] = -v.re;
        }
    }
    let (eigvals, eigvecs) = linalg::sym_eig(&aug);
    let max_abs = eigvals.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let zero_tol = 1e-12 * max_abs.max(f64::MIN_POSITIVE);

    let mut modes = DMatrix::<C64>::zeros(n, n);
    let mut lambdas = Vec::with_capacity(n);
    let mut col = 0usize;
    // strictly positive eigenvalues, largest first (sym_eig sorts ascending)
    for k in (0..2 * n).rev() {
        if eigvals[k] <= zero_tol {
            break;
        }
        if col >= n {
            return Err(Error::Numerical(
                "augmented spectrum has more positive eigenvalues than the dimension allows".into(),
            ));
        }
        for i in 0..n {
            modes[(i, col)] = C64::new(eigvecs[(i, k)], eigvecs[(i + n, k)]);
        }
        lambdas.push(eigvals[k]);
        col += 1;
    }
    // The kernel's null space: eigenvectors of M near 0 come in J-pairs that
    // map to the same complex directions; Gram–Schmidt extracts an
    // orthonormal complex basis of the remaining space.
    if col < n {
        let mut null_candidates: Vec<DVector<C64>> = Vec::new();
        for k in 0..2 * n {
            if eigvals[k].abs() <= zero_tol {
                let u = DVector::<C64>::from_fn(n, |i, _| C64::new(eigvecs[(i, k)], eigvecs[(i + n, k)]));
                null_candidates.push(u);
            }
        }
        for mut u in null_candidates {
            if col >= n {
                break;
            }
            for j in 0..col {
                let proj = modes.column(j).dotc(&u);
                let basis = modes.column(j).into_owned();
                u -= basis * proj;
            }
            let norm = u.norm();
            if norm > 1e-8 {
                u /= C64::new(norm, 0.0);
                for i in 0..n {
                    modes[(i, col)] = u[i];
                }
                lambdas.push(0.0);
                col += 1;
            }
        }
    }
    if col < n {
        return Err(Error::Numerical(format!(
            "takagi basis incomplete: recovered {col} of {n} modes"
        )));
    }
    // Eigenvectors of M at ±λ lose mutual orthogonality as λ → 0 (the two
    // eigenspaces merge), which leaks into ⟨u_i, u_j⟩ for small-λ modes. One
    // modified-Gram-Schmidt sweep in descending-λ order restores
    // orthonormality; the reconstruction is insensitive to the O(ε·σ₀/λ)
    // contamination this removes, because it enters weighted by λ.
    for k in 0..n {
        for j in 0..k {
            let proj = modes.column(j).dotc(&modes.column(k));
            let basis = modes.column(j).into_owned();
            let corrected = modes.column(k) - basis * proj;
            modes.set_column(k, &corrected);
        }
        let norm = modes.column(k).norm();
        if norm < 0.5 {
            return Err(Error::Numerical(
                "takagi basis degenerated during re-orthonormalization".into(),
            ));
        }
        let col_normed = modes.column(k) / C64::new(norm, 0.0);
        modes.set_column(k, &col_normed);
    }
    Ok((modes, DVector::from_vec(lambdas)))
}

fn sort_descending(modes: &mut DMatrix<C64>, lambdas: &mut DVector<f64>) {
    let k = lambdas.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let old_modes = modes.clone();
    let old_lams = lambdas.clone();
    for (new_idx, &old_idx) in order.iter().enumerate() {
        lambdas[new_idx] = old_lams[old_idx];
        modes.set_column(new_idx, &old_modes.column(old_idx));
    }
}

/// Rotate each degenerate Takagi block onto a canonical real-orthogonal
/// frame. Within a block of equal Λ the valid gauge freedom is `U → U·O`
/// with O real orthogonal (complex rotations would break `K = UΛU^T`), so
/// the block is re-derived by Gram–Schmidt of the real coefficient rows in
/// grid-index order: real parts of all rows first, then imaginary parts.
fn canonicalize_degenerate_blocks(modes: &mut DMatrix<C64>, lambdas: &DVector<f64>) {
    let k = lambdas.len();
    if k == 0 {
        return;
    }
    if lambdas[0] <= 0.0 {
        return;
    }
    let tol = DEGENERACY_REL_TOL * lambdas[0];
    let floor = CANONICALIZE_FLOOR_REL * lambdas[0];
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (lambdas[end - 1] - lambdas[end]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 && lambdas[start] > floor {
            canonicalize_block(modes, start, end - start);
        }
        start = end;
    }
}

fn canonicalize_block(modes: &mut DMatrix<C64>, first: usize, m: usize) {
    let n = modes.nrows();
    // coefficient vectors a ∈ R^m representing real recombinations Σ a_k S_k;
    // candidate directions are Re(row i) for each grid index, then Im(row i)
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    'outer: for pass in 0..2 {
        for i in 0..n {
            let mut a: Vec<f64> = (0..m)
                .map(|c| {
                    let v = modes[(i, first + c)];
                    if pass == 0 { v.re } else { v.im }
                })
                .collect();
            let orig_norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if orig_norm == 0.0 {
                continue;
            }
            for b in &basis {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in a.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            // relative acceptance: a residual at rounding level of the
            // original row is numerical noise, not a new direction
            if norm > 1e-6 * orig_norm {
                // sign: pivot (largest-|·|) coefficient positive
                let pivot = a
                    .iter()
                    .copied()
                    .max_by(|x, y| x.abs().total_cmp(&y.abs()))
                    .unwrap_or(1.0);
                let s = if pivot < 0.0 { -1.0 } else { 1.0 };
                for x in a.iter_mut() {
                    *x *= s / norm;
                }
                basis.push(a);
                if basis.len() == m {
                    break 'outer;
                }
            }
        }
    }
    if basis.len() < m {
        // pathological block (should not occur for orthonormal input); leave as is
        return;
    }
    let old: Vec<DVector<C64>> = (0..m).map(|c| modes.column(first + c).into_owned()).collect();
    for (c, a) in basis.iter().enumerate() {
        let mut v = DVector::<C64>::zeros(n);
        for (coef, s) in a.iter().zip(&old) {
            v += s * C64::new(*coef, 0.0);
        }
        modes.set_column(first + c, &v);
    }
}

/// Fix each column's global ±1 sign: the largest-magnitude component gets a
/// positive real part (positive imaginary part if its real part is ~0).
/// e^{iφ} rotations with φ ∉ {0, π} would break the `UΛU^T` identity, so a
/// sign is the only freedom available per nondegenerate mode.
fn fix_signs(modes: &mut DMatrix<C64>) {
    let (n, k) = modes.shape();
    for j in 0..k {
        let mut best = 0usize;
        let mut best_norm = -1.0;
        for i in 0..n {
            let v = modes[(i, j)].norm_sqr();
            if v > best_norm {
                best_norm = v;
                best = i;
            }
        }
        let lead = modes[(best, j)];
        let flip = if lead.re.abs() > 1e-12 * lead.norm() { lead.re < 0.0 } else { lead.im < 0.0 };
        if flip {
            for i in 0..n {
                modes[(i, j)] = -modes[(i, j)];
            }
        }
    }
}

/// Where a detection mode lives spatially relative to the down-conversion
/// beam: the full beam, or one half of the razor-cut recombined beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialPart {
    Full,
    LeftCut,
    RightCut,
}

impl std::fmt::Display for SpatialPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpatialPart::Full => write!(f, "full"),
            SpatialPart::LeftCut => write!(f, "left-cut"),
            SpatialPart::RightCut => write!(f, "right-cut"),
        }
    }
}

/// Spectral shape metadata of a detection mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralPart {
    /// Hermite-Gauss order of the spectral amplitude.
    pub hg_order: u32,
    /// Center wavelength of the spectral envelope (m).
    pub center_wavelength_m: f64,
    /// Intensity FWHM (in wavelength) of the order-0 envelope (m).
    pub fwhm_hg0_m: f64,
}

/// A normalized local-oscillator (detection) mode on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisMode {
    pub label: String,
    /// Flattened, unit-norm mode function on the kernel grid.
    pub vector: DVector<C64>,
    pub spectral: Option<SpectralPart>,
    pub spatial: SpatialPart,
}

impl AnalysisMode {
    /// Overlap ⟨self, other⟩ (conjugate-linear in self).
    pub fn overlap(&self, other: &AnalysisMode) -> C64 {
        self.vector.dotc(&other.vector)
    }
}

/// Transverse (q-marginal) amplitude profile of the dominant squeezing mode:
/// `P(q) = sqrt(Σ_Ω |S_0(q,Ω)|²)`, normalized to unit Euclidean norm. Used
/// as the spatial factor of separable detection modes so they probe the beam
/// where the down-converted light actually is.
pub fn full_beam_profile(decomp: &SqueezingDecomposition, grid: &SpatioSpectralGrid) -> Result<DVector<f64>> {
    if decomp.is_empty() {
        return Err(Error::Input("empty decomposition".into()));
    }
    if decomp.modes.nrows() != grid.len() {
        return Err(Error::Input(format!(
            "decomposition dimension {} does not match grid size {}",
            decomp.modes.nrows(),
            grid.len()
        )));
    }
    let n_q = grid.n_q();
    let n_om = grid.n_omega();
    let lead = decomp.modes.column(0);
    let mut profile = DVector::<f64>::zeros(n_q);
    for iq in 0..n_q {
        let mut acc = 0.0;
        for iom in 0..n_om {
            acc += lead[grid.flat_index(iq, iom)].norm_sqr();
        }
        profile[iq] = acc.sqrt();
    }
    let norm = profile.norm();
    if norm == 0.0 {
        return Err(Error::Numerical("dominant mode has zero spatial weight".into()));
    }
    Ok(profile / norm)
}

/// Physicists' Hermite polynomial H_n(x) by recurrence.
fn hermite(n: u32, x: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * x;
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * (k as f64) * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Build a separable detection mode: Hermite-Gauss spectral amplitude of the
/// given order around `center_wavelength_m` (envelope sized so the order-0
/// intensity FWHM is `fwhm_m` in wavelength), times the supplied transverse
/// profile. The mode is normalized on the grid.
///
/// Fails when the grid cannot support the request: envelope extending past
/// the grid (coverage < 4 envelope widths), under-resolved envelope
/// (< 8 points per order-0 FWHM), or order > 10.
pub fn hermite_gauss_spectral(
    order: u32,
    center_wavelength_m: f64,
    fwhm_m: f64,
    grid: &SpatioSpectralGrid,
    spatial_profile: &DVector<f64>,
) -> Result<AnalysisMode> {
    if order > 10 {
        return Err(Error::Config(format!("Hermite-Gauss order {order} exceeds the supported range (≤ 10)")));
    }
    if fwhm_m <= 0.0 || center_wavelength_m <= 0.0 {
        return Err(Error::Config("Hermite-Gauss center wavelength and FWHM must be > 0".into()));
    }
    if spatial_profile.len() != grid.n_q() {
        return Err(Error::Input(format!(
            "spatial profile length {} does not match grid n_q {}",
            spatial_profile.len(),
            grid.n_q()
        )));
    }
    // intensity FWHM in Ω for the order-0 Gaussian envelope
    let omega_fwhm = 2.0 * std::f64::consts::PI * crate::crystal_optics::SPEED_OF_LIGHT * fwhm_m
        / (center_wavelength_m * center_wavelength_m);
    // amplitude envelope exp(−x²/2), x = Ω/s: intensity FWHM = 2s√(ln2)
    let s = omega_fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
    let n_om = grid.n_omega();
    let om_hi = *grid.omega_points().last().unwrap();
    let om_lo = grid.omega_points()[0];
    if n_om < 2 || om_hi < 4.0 * s || om_lo > -4.0 * s {
        return Err(Error::Config(format!(
            "grid Ω span [{om_lo:e}, {om_hi:e}] does not cover ±4 envelope widths (±{:e})",
            4.0 * s
        )));
    }
    if omega_fwhm / grid.domega() < 8.0 {
        return Err(Error::Config(format!(
            "grid under-resolves the Hermite-Gauss envelope: {:.2} points per FWHM (need ≥ 8)",
            omega_fwhm / grid.domega()
        )));
    }
    let spectral: Vec<f64> = grid
        .omega_points()
        .iter()
        .map(|&om| {
            let x = om / s;
            hermite(order, x) * (-x * x / 2.0).exp()
        })
        .collect();
    let n_q = grid.n_q();
    let mut vector = DVector::<C64>::zeros(grid.len());
    for iq in 0..n_q {
        for iom in 0..n_om {
            vector[grid.flat_index(iq, iom)] = C64::new(spatial_profile[iq] * spectral[iom], 0.0);
        }
    }
    let norm = vector.norm();
    if norm == 0.0 {
        return Err(Error::Numerical("Hermite-Gauss mode has zero norm on this grid".into()));
    }
    vector /= C64::new(norm, 0.0);
    Ok(AnalysisMode {
        label: format!("HG{order}"),
        vector,
        spectral: Some(SpectralPart {
            hg_order: order,
            center_wavelength_m,
            fwhm_hg0_m: fwhm_m,
        }),
        spatial: SpatialPart::Full,
    })
}

/// Razor-cut a detection mode into one spatial half, in the frame of the
/// recombined beam.
///
/// Downstream of the source the two non-collinear lobes are overlapped on a
/// recombination beamsplitter (one lobe picking up a mirror reflection), so
/// a razor blade at the center of the recombined beam maps, in the crystal
/// frame simulated here, to a symmetric pair of cut planes at the per-side
/// half-power points: "left" keeps the inner region (between the planes,
/// |q| small), "right" keeps the outer region. Cut planes snap to grid-cell
/// boundaries, which keeps the two halves exactly orthogonal.
///
/// Returns the renormalized half mode and the power fraction it kept.
pub fn half_cut_spatial(
    side: SpatialPart,
    base: &AnalysisMode,
    grid: &SpatioSpectralGrid,
) -> Result<(AnalysisMode, f64)> {
    if side == SpatialPart::Full {
        return Err(Error::Config("half-cut side must be left-cut or right-cut".into()));
    }
    if base.spatial != SpatialPart::Full {
        return Err(Error::Input("cannot razor-cut a mode that is already cut".into()));
    }
    if base.vector.len() != grid.len() {
        return Err(Error::Input("mode length does not match grid".into()));
    }
    let n_q = grid.n_q();
    let n_om = grid.n_omega();
    // per-row power
    let mut row_power = vec![0.0_f64; n_q];
    let mut total = 0.0;
    for iq in 0..n_q {
        let mut acc = 0.0;
        for iom in 0..n_om {
            acc += base.vector[grid.flat_index(iq, iom)].norm_sqr();
        }
        row_power[iq] = acc;
        total += acc;
    }
    if total == 0.0 {
        return Err(Error::Input("mode has zero power".into()));
    }
    // split rows by the sign of q, then find each side's half-power boundary
    // walking outward from q = 0
    let rows_neg: Vec<usize> = (0..n_q).filter(|&i| grid.q_points()[i] < 0.0).rev().collect();
    let rows_pos: Vec<usize> = (0..n_q).filter(|&i| grid.q_points()[i] >= 0.0).collect();
    let inner_of = |rows: &[usize]| -> Vec<usize> {
        let side_total: f64 = rows.iter().map(|&i| row_power[i]).sum();
        if side_total == 0.0 {
            return Vec::new();
        }
        // choose the boundary (after k rows) whose cumulative power is
        // closest to half of this side's power
        let mut best_k = 0usize;
        let mut best_err = f64::INFINITY;
        let mut cum = 0.0;
        for (k, &row) in rows.iter().enumerate() {
            cum += row_power[row];
            let err = (cum - 0.5 * side_total).abs();
            if err < best_err {
                best_err = err;
                best_k = k + 1;
            }
        }
        // a boundary before any row may also be closest
        if (0.5 * side_total) < best_err {
            best_k = 0;
        }
        rows[..best_k].to_vec()
    };
    let mut inner: Vec<usize> = inner_of(&rows_neg);
    inner.extend(inner_of(&rows_pos));
    let keep_inner = side == SpatialPart::LeftCut;
    let mut mask = vec![!keep_inner; n_q];
    for &i in &inner {
        mask[i] = keep_inner;
    }
    let mut vector = DVector::<C64>::zeros(grid.len());
    let mut kept_power = 0.0;
    for iq in 0..n_q {
        if mask[iq] {
            kept_power += row_power[iq];
            for iom in 0..n_om {
                let idx = grid.flat_index(iq, iom);
                vector[idx] = base.vector[idx];
            }
        }
    }
    let frac = kept_power / total;
    if kept_power == 0.0 {
        return Err(Error::Input(format!(
            "razor cut left no power on the {side} half of mode '{}'",
            base.label
        )));
    }
    vector /= C64::new(kept_power.sqrt(), 0.0);
    let label = match side {
        SpatialPart::LeftCut => "L".to_string(),
        SpatialPart::RightCut => "R".to_string(),
        SpatialPart::Full => unreachable!(),
    };
    Ok((
        AnalysisMode { label, vector, spectral: base.spectral.clone(), spatial: side },
        frac,
    ))
}

/// Equal-weight sum of two orthogonal detection modes, `(a + b)/√2`.
pub fn sum_mode(a: &AnalysisMode, b: &AnalysisMode) -> Result<AnalysisMode> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::Input("sum-mode inputs live on different grids".into()));
    }
    let ov = a.overlap(b);
    if ov.norm() > 1e-8 {
        return Err(Error::Input(format!(
            "sum-mode inputs are not orthogonal: |⟨{}, {}⟩| = {:.3e}",
            a.label,
            b.label,
            ov.norm()
        )));
    }
    let vector = (&a.vector + &b.vector) / C64::new(2.0_f64.sqrt(), 0.0);
    Ok(AnalysisMode {
        label: format!("{}+{}-sum", a.label, b.label),
        vector,
        spectral: None,
        spatial: if a.spatial == b.spatial { a.spatial } else { SpatialPart::Full },
    })
}

/// Expansion coefficients `c_k = ⟨S_k, mode⟩` of a detection mode over the
/// squeezing modes.
pub fn overlaps(mode: &AnalysisMode, decomp: &SqueezingDecomposition) -> Result<DVector<C64>> {
    if mode.vector.len() != decomp.modes.nrows() {
        return Err(Error::Input("mode length does not match decomposition".into()));
    }
    Ok(decomp.modes.ad_mul(&mode.vector))
}
