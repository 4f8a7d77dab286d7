//! Experiment configuration: TOML schema with explicit units, dotted-path
//! overrides, and resolution into the physical types the pipeline runs on.
//!
//! Every physical quantity in a config file is a `{ value, unit }` table;
//! plain numbers are rejected for physical keys so a bare `length = 2.0`
//! can never silently mean metres-or-millimetres. Dimensionless keys
//! (counts, multipliers, efficiencies, dB anchors) are plain numbers.

use crate::crystal_optics::{CrystalSpec, SPEED_OF_LIGHT, solve_phase_matching_angle};
use crate::error::{Error, Result};
use crate::homodyne_sim::{GainMapping, NoiseModel, TraceProtocol};
use crate::pump_kernel::{PumpProfile, SpatioSpectralGrid};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// The shipped default experiment (§"at the paper defaults" everywhere):
/// 2 mm BBO, 1.8° non-collinear, 397.5 nm / 1.82 nm pump, 49 µm waist,
/// Hermite-Gauss analysis at 795 nm / 15 nm, η = 0.21, −0.35 dB anchor.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../config/default.toml");

/// A physical value with an explicit unit, exactly as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    fn convert(&self, key: &str, table: &[(&str, f64)], dimension: &str) -> Result<f64> {
        for (unit, factor) in table {
            if self.unit == *unit {
                return Ok(self.value * factor);
            }
        }
        let accepted: Vec<&str> = table.iter().map(|(u, _)| *u).collect();
        Err(Error::Config(format!(
            "{key}: unit '{}' is not a {dimension} unit (accepted: {})",
            self.unit,
            accepted.join(", ")
        )))
    }

    pub fn in_meters(&self, key: &str) -> Result<f64> {
        self.convert(
            key,
            &[
                ("m", 1.0),
                ("cm", 1e-2),
                ("mm", 1e-3),
                ("um", 1e-6),
                ("µm", 1e-6),
                ("nm", 1e-9),
                ("pm", 1e-12),
            ],
            "length",
        )
    }

    pub fn in_radians(&self, key: &str) -> Result<f64> {
        self.convert(
            key,
            &[
                ("rad", 1.0),
                ("mrad", 1e-3),
                ("deg", std::f64::consts::PI / 180.0),
            ],
            "angle",
        )
    }

    pub fn in_seconds_squared(&self, key: &str) -> Result<f64> {
        self.convert(key, &[("s^2", 1.0), ("fs^2", 1e-30)], "time-squared")
    }

    pub fn in_hertz(&self, key: &str) -> Result<f64> {
        self.convert(
            key,
            &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9), ("THz", 1e12)],
            "frequency",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalSection {
    pub length: Quantity,
    pub noncollinear_angle: Quantity,
    /// Optical-axis cut angle; omitted means "solve for exact degenerate
    /// phase matching at the non-collinear angle".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_angle: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    pub center_wavelength: Quantity,
    pub spectral_fwhm: Quantity,
    pub waist: Quantity,
    pub chirp: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub q_points: usize,
    pub omega_points: usize,
    pub q_span_multiplier: f64,
    pub omega_span_multiplier: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { q_points: 48, omega_points: 96, q_span_multiplier: 1.0, omega_span_multiplier: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub hg_orders: u32,
    pub hg_center_wavelength: Quantity,
    pub hg0_fwhm: Quantity,
    pub spatial_cuts: bool,
    pub mapping: GainMapping,
    pub efficiency: f64,
    // field-level defaults so an explicit [analysis] section that omits an
    // anchor key leaves it None instead of inheriting Some(-0.35) from the
    // container default (only a fully absent section takes that default)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_target_db: Option<f64>,
    pub threshold_sigmas: f64,
    pub bootstrap_rounds: u32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            hg_orders: 4,
            hg_center_wavelength: Quantity { value: 795.0, unit: "nm".into() },
            hg0_fwhm: Quantity { value: 15.0, unit: "nm".into() },
            spatial_cuts: true,
            mapping: GainMapping::Exponential,
            efficiency: 0.21,
            gain: None,
            calibration_target_db: Some(-0.35),
            threshold_sigmas: 3.0,
            bootstrap_rounds: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub enabled: bool,
    pub effective_samples: u64,
    pub phase_rate: Quantity,
    pub periods: u32,
    pub samples_per_period: u32,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            enabled: true,
            effective_samples: 50_000,
            phase_rate: Quantity { value: 0.3, unit: "Hz".into() },
            periods: 4,
            samples_per_period: 400,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub kernel_cache: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out"), kernel_cache: true }
    }
}

/// The raw experiment file. Crystal and pump sections are mandatory; the
/// rest default to the shipped experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub crystal: CrystalSection,
    pub pump: PumpSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// How the peak gain is fixed for the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GainSetting {
    /// Use this gain directly.
    Fixed { value: f64 },
    /// Solve the gain so the order-0 Hermite-Gauss mode squeezes to the
    /// target level.
    Calibrated { target_db: f64 },
}

/// Analysis choices after validation, in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub hg_orders: u32,
    pub hg_center_wavelength_m: f64,
    pub hg0_fwhm_m: f64,
    pub spatial_cuts: bool,
    pub mapping: GainMapping,
    pub efficiency: f64,
    pub gain: GainSetting,
    pub threshold_sigmas: f64,
    pub bootstrap_rounds: u32,
}

/// A validated, unit-resolved experiment ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub crystal: CrystalSpec,
    pub pump: PumpProfile,
    pub grid: SpatioSpectralGrid,
    pub analysis: AnalysisSettings,
    pub protocol: TraceProtocol,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub kernel_cache: bool,
    /// Hash over everything the kernel depends on; cache-invalidation key.
    pub fingerprint: String,
}

/// Read a config file, or the built-in default when `path` is `None`.
pub fn load_config_table(path: Option<&Path>) -> Result<toml::Table> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", p.display())))?,
        None => DEFAULT_CONFIG_TOML.to_string(),
    };
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))
}

/// Apply one `key.path=value` override to the raw config tree. Values are
/// parsed as TOML (numbers, booleans, inline tables); anything that does
/// not parse is taken as a string. Setting `analysis.gain` drops
/// `analysis.calibration_target_db` and vice versa, so overriding the gain
/// anchor of the shipped config never trips the exactly-one-of rule.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override path '{path}' has an empty segment")));
    }
    let value = parse_override_value(raw.trim());
    let mut current = table;
    for k in &keys[..keys.len() - 1] {
        current = current
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}': '{k}' is not a table")))?;
    }
    let last = keys[keys.len() - 1];
    // the two gain anchors are mutually exclusive; an override picks its side
    if keys.as_slice() == ["analysis", "gain"] {
        current.remove("calibration_target_db");
    } else if keys.as_slice() == ["analysis", "calibration_target_db"] {
        current.remove("gain");
    }
    current.insert(last.to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Deserialize the (possibly overridden) raw tree into the typed config.
pub fn parse_config(table: toml::Table) -> Result<ExperimentConfig> {
    table
        .try_into::<ExperimentConfig>()
        .map_err(|e| Error::Config(format!("config: {e}")))
}

/// FNV-1a over a canonical rendering of the kernel-relevant parameters.
fn fingerprint(crystal: &CrystalSpec, pump: &PumpProfile, grid: &SpatioSpectralGrid) -> String {
    let canon = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        (crystal.length_m, crystal.theta0_rad, crystal.noncollinear_angle_rad),
        (crystal.sellmeier_ordinary.a, crystal.sellmeier_ordinary.b, crystal.sellmeier_ordinary.c, crystal.sellmeier_ordinary.d),
        (crystal.sellmeier_extraordinary.a, crystal.sellmeier_extraordinary.b, crystal.sellmeier_extraordinary.c, crystal.sellmeier_extraordinary.d),
        (pump.center_wavelength_m, pump.spectral_fwhm_m, pump.waist_m, pump.chirp_s2),
        (grid.n_q(), grid.n_omega()),
        (grid.q_points()[0], grid.dq(), grid.omega_points()[0], grid.domega()),
    );
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for byte in canon.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

/// Validate and convert the raw config into runnable form: units to SI,
/// phase-matching angle solved (unless pinned by `crystal.cut_angle`), the
/// grid designed around the pump, phase matching, and local-oscillator
/// envelope, and the gain anchor checked for exactly-one-of.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment> {
    let length_m = cfg.crystal.length.in_meters("crystal.length")?;
    let alpha_rad = cfg.crystal.noncollinear_angle.in_radians("crystal.noncollinear_angle")?;
    let mut crystal = CrystalSpec::bbo(length_m, alpha_rad);
    let pump = PumpProfile {
        center_wavelength_m: cfg.pump.center_wavelength.in_meters("pump.center_wavelength")?,
        spectral_fwhm_m: cfg.pump.spectral_fwhm.in_meters("pump.spectral_fwhm")?,
        waist_m: cfg.pump.waist.in_meters("pump.waist")?,
        chirp_s2: cfg.pump.chirp.in_seconds_squared("pump.chirp")?,
        gain: 1.0,
    };
    pump.validate()?;
    crystal.theta0_rad = match &cfg.crystal.cut_angle {
        Some(q) => q.in_radians("crystal.cut_angle")?,
        None => solve_phase_matching_angle(&crystal, alpha_rad, pump.center_wavelength_m)?,
    };
    crystal.validate()?;

    let a = &cfg.analysis;
    let gain = match (a.gain, a.calibration_target_db) {
        (Some(g), None) => {
            if g < 0.0 || !g.is_finite() {
                return Err(Error::Config(format!("analysis.gain = {g} must be finite and ≥ 0")));
            }
            GainSetting::Fixed { value: g }
        }
        (None, Some(db)) => {
            if db >= 0.0 || !db.is_finite() {
                return Err(Error::Config(format!(
                    "analysis.calibration_target_db = {db} must be a negative dB value"
                )));
            }
            GainSetting::Calibrated { target_db: db }
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "analysis: set exactly one of gain and calibration_target_db, not both".into(),
            ));
        }
        (None, None) => {
            return Err(Error::Config(
                "analysis: one of gain or calibration_target_db is required".into(),
            ));
        }
    };
    if !(0.0..=1.0).contains(&a.efficiency) {
        return Err(Error::Config(format!("analysis.efficiency = {} outside [0, 1]", a.efficiency)));
    }
    if a.hg_orders == 0 || a.hg_orders > 11 {
        return Err(Error::Config(format!("analysis.hg_orders = {} outside 1..=11", a.hg_orders)));
    }
    let hg_center_m = a.hg_center_wavelength.in_meters("analysis.hg_center_wavelength")?;
    let hg0_fwhm_m = a.hg0_fwhm.in_meters("analysis.hg0_fwhm")?;
    let analysis = AnalysisSettings {
        hg_orders: a.hg_orders,
        hg_center_wavelength_m: hg_center_m,
        hg0_fwhm_m,
        spatial_cuts: a.spatial_cuts,
        mapping: a.mapping,
        efficiency: a.efficiency,
        gain,
        threshold_sigmas: a.threshold_sigmas,
        bootstrap_rounds: a.bootstrap_rounds,
    };

    // the grid must resolve the pump and phase matching AND contain the
    // local-oscillator envelope: ±4 envelope widths of the order-0 profile
    let hg_omega_fwhm =
        2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * hg0_fwhm_m / (hg_center_m * hg_center_m);
    let min_omega_half = 4.0 * hg_omega_fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
    let grid = SpatioSpectralGrid::design(
        &crystal,
        &pump,
        cfg.grid.q_points,
        cfg.grid.omega_points,
        cfg.grid.q_span_multiplier,
        cfg.grid.omega_span_multiplier,
        min_omega_half,
    )?;

    let n = &cfg.noise;
    let protocol = TraceProtocol {
        phase_rate_hz: n.phase_rate.in_hertz("noise.phase_rate")?,
        periods: n.periods,
        samples_per_period: n.samples_per_period,
        noise: if n.enabled { Some(NoiseModel { effective_samples: n.effective_samples }) } else { None },
    };

    let fingerprint = fingerprint(&crystal, &pump, &grid);
    Ok(ResolvedExperiment {
        crystal,
        pump,
        grid,
        analysis,
        protocol,
        seed: n.seed,
        out_dir: cfg.output.directory.clone(),
        kernel_cache: cfg.output.kernel_cache,
        fingerprint,
    })
}

/// One-call path used by the CLI: load, override, parse, resolve. Returns
/// the resolved experiment together with the effective raw tree (what gets
/// echoed into the output directory).
pub fn load_experiment(
    path: Option<&Path>,
    overrides: &[String],
    seed_flag: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<(ResolvedExperiment, toml::Table)> {
    let mut table = load_config_table(path)?;
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    if let Some(seed) = seed_flag {
        apply_override(&mut table, &format!("noise.seed={seed}"))?;
    }
    if let Some(out) = out_flag {
        apply_override(&mut table, &format!("output.directory=\"{}\"", out.display()))?;
    }
    let cfg = parse_config(table.clone())?;
    let resolved = resolve(&cfg)?;
    Ok((resolved, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_config_parses_and_resolves() {
        let table = load_config_table(None).unwrap();
        let cfg = parse_config(table).unwrap();
        let exp = resolve(&cfg).unwrap();
        assert_relative_eq!(exp.crystal.length_m, 2e-3);
        assert_relative_eq!(exp.crystal.noncollinear_angle_rad, 1.8_f64.to_radians());
        assert_relative_eq!(exp.pump.center_wavelength_m, 397.5e-9);
        assert_relative_eq!(exp.pump.spectral_fwhm_m, 1.82e-9);
        assert_relative_eq!(exp.pump.waist_m, 49e-6);
        assert_eq!(exp.grid.n_q(), 48);
        assert_eq!(exp.grid.n_omega(), 96);
        assert_eq!(exp.analysis.gain, GainSetting::Calibrated { target_db: -0.35 });
        assert_eq!(exp.analysis.hg_orders, 4);
        assert_relative_eq!(exp.analysis.hg0_fwhm_m, 15e-9);
        assert_eq!(exp.seed, 7);
        assert!(exp.protocol.noise.is_some());
        assert_eq!(exp.fingerprint.len(), 16);
        // solved phase-matching angle sits in the physical window
        assert!(exp.crystal.theta0_rad > 0.4 && exp.crystal.theta0_rad < 0.6);
    }

    #[test]
    fn unitless_physical_keys_are_rejected() {
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "pump.waist=49.0").unwrap();
        let err = parse_config(table).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn wrong_dimension_units_are_rejected() {
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "pump.waist={ value = 49.0, unit = \"deg\" }").unwrap();
        let cfg = parse_config(table).unwrap();
        let err = resolve(&cfg).unwrap_err();
        assert!(err.to_string().contains("pump.waist"), "{err}");
    }

    #[test]
    fn missing_pump_section_is_named() {
        let table = "[crystal]\nlength = { value = 2.0, unit = \"mm\" }\nnoncollinear_angle = { value = 1.8, unit = \"deg\" }\n"
            .parse::<toml::Table>()
            .unwrap();
        let err = parse_config(table).unwrap_err();
        assert!(err.to_string().contains("pump"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "pump.wiast={ value = 49.0, unit = \"um\" }").unwrap();
        assert!(parse_config(table).is_err());
    }

    #[test]
    fn gain_exactly_one_of() {
        // both set → error
        let mut both = load_config_table(None).unwrap();
        both.get_mut("analysis")
            .unwrap()
            .as_table_mut()
            .unwrap()
            .insert("gain".into(), toml::Value::Float(0.2));
        let cfg = parse_config(both).unwrap();
        assert!(resolve(&cfg).unwrap_err().to_string().contains("exactly one"));
        // override path swaps the anchor instead of erroring
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "analysis.gain=0").unwrap();
        let cfg = parse_config(table).unwrap();
        let exp = resolve(&cfg).unwrap();
        assert_eq!(exp.analysis.gain, GainSetting::Fixed { value: 0.0 });
        // and back
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "analysis.gain=0.3").unwrap();
        apply_override(&mut table, "analysis.calibration_target_db=-0.5").unwrap();
        let exp = resolve(&parse_config(table).unwrap()).unwrap();
        assert_eq!(exp.analysis.gain, GainSetting::Calibrated { target_db: -0.5 });
    }

    #[test]
    fn overrides_parse_types_and_nested_paths() {
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "grid.q_points=32").unwrap();
        apply_override(&mut table, "noise.enabled=false").unwrap();
        apply_override(&mut table, "output.directory=\"/tmp/run1\"").unwrap();
        apply_override(&mut table, "crystal.length={ value = 1.0, unit = \"mm\" }").unwrap();
        let exp = resolve(&parse_config(table).unwrap()).unwrap();
        assert_eq!(exp.grid.n_q(), 32);
        assert!(exp.protocol.noise.is_none());
        assert_eq!(exp.out_dir, PathBuf::from("/tmp/run1"));
        assert_relative_eq!(exp.crystal.length_m, 1e-3);
        assert!(apply_override(&mut toml::Table::new(), "no-equals-sign").is_err());
    }

    #[test]
    fn seed_and_out_flags_override_the_file() {
        let (exp, table) = load_experiment(None, &[], Some(99), Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(exp.seed, 99);
        assert_eq!(exp.out_dir, PathBuf::from("/tmp/x"));
        // the echoed tree reflects the effective values
        assert_eq!(
            table["noise"]["seed"].as_integer(),
            Some(99),
            "echo should carry the effective seed"
        );
    }

    #[test]
    fn fingerprint_tracks_kernel_inputs_only() {
        let (a, _) = load_experiment(None, &[], None, None).unwrap();
        let (b, _) = load_experiment(None, &["noise.seed=123".into()], None, None).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint, "seed must not invalidate the kernel cache");
        let (c, _) = load_experiment(None, &["pump.waist={ value = 50.0, unit = \"um\" }".into()], None, None)
            .unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
        let (d, _) = load_experiment(None, &["grid.q_points=32".into()], None, None).unwrap();
        assert_ne!(a.fingerprint, d.fingerprint);
    }

    #[test]
    fn mapping_values_deserialize() {
        let mut table = load_config_table(None).unwrap();
        apply_override(&mut table, "analysis.mapping=\"linearized\"").unwrap();
        let exp = resolve(&parse_config(table).unwrap()).unwrap();
        assert_eq!(exp.analysis.mapping, GainMapping::Linearized);
        let mut bad = load_config_table(None).unwrap();
        apply_override(&mut bad, "analysis.mapping=\"cubic\"").unwrap();
        assert!(parse_config(bad).is_err());
    }
}
