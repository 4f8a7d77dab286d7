//! Timing probe for the paper-default kernel (48×96 grid).

use sqzlab_core::crystal_optics::{CrystalSpec, solve_phase_matching_angle};
use sqzlab_core::mode_decomposition::takagi;
use sqzlab_core::pump_kernel::{PumpProfile, SpatioSpectralGrid, build_kernel};
use std::time::Instant;

fn main() {
    let mut crystal = CrystalSpec::bbo(2e-3, 1.8_f64.to_radians());
    crystal.theta0_rad =
        solve_phase_matching_angle(&crystal, crystal.noncollinear_angle_rad, 397.5e-9).unwrap();
    let pump = PumpProfile {
        center_wavelength_m: 397.5e-9,
        spectral_fwhm_m: 1.82e-9,
        waist_m: 49e-6,
        chirp_s2: 0.0,
        gain: 1.0,
    };
    // HG envelope demand: 4·s for the 15 nm HG₀ profile at 795 nm
    let c = 299_792_458.0;
    let om_fwhm = 2.0 * std::f64::consts::PI * c * 15e-9 / (795e-9_f64 * 795e-9);
    let s_hg = om_fwhm / (2.0 * (2.0_f64.ln()).sqrt());
    let t0 = Instant::now();
    let grid = SpatioSpectralGrid::design(&crystal, &pump, 48, 96, 1.0, 1.0, 4.0 * s_hg).unwrap();
    let kernel = build_kernel(&grid, &pump, &crystal).unwrap();
    println!(
        "kernel built in {:?}  (N = {}, real = {})",
        t0.elapsed(),
        grid.len(),
        kernel.matrix.is_real()
    );
    let t1 = Instant::now();
    let decomp = takagi(&kernel).unwrap();
    println!(
        "takagi in {:?}  ({} modes, discarded {:.3e})",
        t1.elapsed(),
        decomp.len(),
        decomp.discarded_weight
    );
    let t2 = Instant::now();
    let resid = decomp.reconstruction_residual(&kernel.matrix);
    println!("reconstruction residual {:.3e} in {:?}", resid, t2.elapsed());
    let above = (0..decomp.len()).filter(|k| decomp.normalized_lambda(*k) > 0.1).count();
    println!("eigenvalues above 0.1·Λ₀: {above}");
    let first: Vec<f64> = (0..8).map(|k| decomp.normalized_lambda(k)).collect();
    println!("first 8 normalized: {first:?}");
}
