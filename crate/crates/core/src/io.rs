//! On-disk artifact formats.
//!
//! Everything the pipeline writes is plain text — CSV with a `# sqzlab
//! <kind> v<N>` comment header, or pretty-printed JSON with a `version`
//! field — except the optional kernel cache, a little-endian binary blob
//! keyed by the configuration fingerprint. Floats are rendered with Rust's
//! shortest round-trip formatting, so identical runs are byte-identical.

use crate::covariance_lab::{BlockEigenanalysis, CovarianceBlocks};
use crate::error::{Error, Result};
use crate::homodyne_sim::{HomodyneTrace, TraceMetadata, TraceProtocol};
use crate::linalg::C64;
use crate::mode_decomposition::{AnalysisMode, SqueezingDecomposition};
use crate::pump_kernel::{GainKernel, KernelMatrix, SpatioSpectralGrid};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, de::DeserializeOwned};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Version stamped into every artifact header.
pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path, what: &str, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{what} {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// output directory lock

/// Exclusive claim on an output directory, held for the duration of a run.
/// The lock is a `.lock` file created with `create_new`; a second process
/// (or a crashed run's leftover) surfaces as an I/O error naming the file.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, "cannot create output directory", e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(format!(
                "output directory is locked by {} (another run in progress, or remove the stale lock)",
                path.display()
            ))),
            Err(e) => Err(io_err(&path, "cannot create lock file", e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// JSON helpers

/// Pretty-printed JSON plus a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, "cannot create", e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, "cannot serialize", e))?;
    w.write_all(b"\n").and_then(|()| w.flush()).map_err(|e| io_err(path, "cannot write", e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| io_err(path, "cannot open", e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| io_err(path, "cannot parse", e))
}

/// The effective configuration, echoed back as TOML.
pub fn write_resolved_config(path: &Path, table: &toml::Table) -> Result<()> {
    let text = toml::to_string_pretty(table).map_err(|e| io_err(path, "cannot serialize", e))?;
    fs::write(path, text).map_err(|e| io_err(path, "cannot write", e))
}

// ---------------------------------------------------------------------------
// kernel cache

const KERNEL_MAGIC: &[u8; 4] = b"SQZK";

#[derive(Debug, Serialize, Deserialize)]
struct KernelCacheMeta {
    version: u32,
    fingerprint: String,
    complex: bool,
    n_q: usize,
    n_omega: usize,
    frobenius_norm: f64,
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Store `kernel.bin` + `kernel.meta.json` in `dir`. The binary layout is
/// magic, format version (u32), complex flag (u8), axis lengths (u64 ×2),
/// the two axes, then row-major matrix entries (re or re,im interleaved),
/// all little-endian.
pub fn store_kernel(dir: &Path, kernel: &GainKernel, fingerprint: &str) -> Result<()> {
    let path = dir.join("kernel.bin");
    let inner = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&path)?);
        w.write_all(KERNEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[u8::from(!kernel.matrix.is_real())])?;
        w.write_all(&(kernel.grid.n_q() as u64).to_le_bytes())?;
        w.write_all(&(kernel.grid.n_omega() as u64).to_le_bytes())?;
        write_f64s(&mut w, kernel.grid.q_points().iter().copied())?;
        write_f64s(&mut w, kernel.grid.omega_points().iter().copied())?;
        match &kernel.matrix {
            KernelMatrix::Real(m) => {
                for i in 0..m.nrows() {
                    write_f64s(&mut w, (0..m.ncols()).map(|j| m[(i, j)]))?;
                }
            }
            KernelMatrix::Complex(m) => {
                for i in 0..m.nrows() {
                    write_f64s(&mut w, (0..m.ncols()).flat_map(|j| [m[(i, j)].re, m[(i, j)].im]))?;
                }
            }
        }
        w.flush()
    };
    inner().map_err(|e| io_err(&path, "cannot write kernel cache", e))?;
    let meta = KernelCacheMeta {
        version: FORMAT_VERSION,
        fingerprint: fingerprint.to_string(),
        complex: !kernel.matrix.is_real(),
        n_q: kernel.grid.n_q(),
        n_omega: kernel.grid.n_omega(),
        frobenius_norm: kernel.matrix.norm(),
    };
    write_json(&dir.join("kernel.meta.json"), &meta)
}

/// Load a cached kernel if one exists and its fingerprint matches. Any
/// mismatch or structural defect invalidates the cache (returns `None`);
/// this never hard-fails the run, since the kernel can always be rebuilt.
pub fn load_kernel(dir: &Path, fingerprint: &str) -> Option<GainKernel> {
    let meta: KernelCacheMeta = read_json(&dir.join("kernel.meta.json")).ok()?;
    if meta.version != FORMAT_VERSION || meta.fingerprint != fingerprint {
        return None;
    }
    let mut r = BufReader::new(fs::File::open(dir.join("kernel.bin")).ok()?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).ok()?;
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver).ok()?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).ok()?;
    let mut dim = [0u8; 8];
    r.read_exact(&mut dim).ok()?;
    let n_q = u64::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim).ok()?;
    let n_omega = u64::from_le_bytes(dim) as usize;
    if &magic != KERNEL_MAGIC
        || u32::from_le_bytes(ver) != FORMAT_VERSION
        || (flag[0] != 0) != meta.complex
        || n_q != meta.n_q
        || n_omega != meta.n_omega
        || n_q.checked_mul(n_omega).is_none_or(|n| n == 0)
    {
        return None;
    }
    let q_points = read_f64s(&mut r, n_q).ok()?;
    let omega_points = read_f64s(&mut r, n_omega).ok()?;
    let grid = SpatioSpectralGrid::new(q_points, omega_points).ok()?;
    let n = grid.len();
    let matrix = if meta.complex {
        let raw = read_f64s(&mut r, 2 * n * n).ok()?;
        KernelMatrix::Complex(DMatrix::from_fn(n, n, |i, j| {
            let k = 2 * (i * n + j);
            C64::new(raw[k], raw[k + 1])
        }))
    } else {
        let raw = read_f64s(&mut r, n * n).ok()?;
        KernelMatrix::Real(DMatrix::from_fn(n, n, |i, j| raw[i * n + j]))
    };
    // trailing garbage or a norm mismatch means the blob is not ours
    if r.read(&mut [0u8; 1]).ok()? != 0 {
        return None;
    }
    let norm = matrix.norm();
    let scale = meta.frobenius_norm.abs().max(1.0);
    // inverted comparison so a NaN norm (bit rot) also misses
    if !((norm - meta.frobenius_norm).abs() <= 1e-12 * scale) {
        return None;
    }
    Some(GainKernel { grid, matrix, gain: 1.0 })
}

// ---------------------------------------------------------------------------
// CSV writing

/// Open a CSV artifact and stamp the versioned comment header.
fn csv_writer(path: &Path, kind: &str) -> Result<csv::Writer<BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| io_err(path, "cannot create", e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# sqzlab {kind} v{FORMAT_VERSION}").map_err(|e| io_err(path, "cannot write", e))?;
    Ok(csv::Writer::from_writer(w))
}

fn write_row<I, S>(w: &mut csv::Writer<BufWriter<fs::File>>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    w.write_record(row.into_iter().map(|s| s.as_ref().to_string()))
        .map_err(|e| io_err(path, "cannot write", e))
}

fn finish_csv(mut w: csv::Writer<BufWriter<fs::File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| io_err(path, "cannot write", e))?;
    let mut inner = w.into_inner().map_err(|e| io_err(path, "cannot write", e))?;
    inner.flush().map_err(|e| io_err(path, "cannot write", e))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Takagi spectrum: `index,takagi_value,relative_value`.
pub fn write_modes_csv(path: &Path, decomp: &SqueezingDecomposition) -> Result<()> {
    let mut w = csv_writer(path, "takagi-spectrum")?;
    write_row(&mut w, path, ["index", "takagi_value", "relative_value"])?;
    for k in 0..decomp.len() {
        write_row(
            &mut w,
            path,
            [k.to_string(), fmt(decomp.lambdas[k]), fmt(decomp.normalized_lambda(k))],
        )?;
    }
    finish_csv(w, path)
}

/// Spectral marginal amplitudes `A(Ω) = √(Σ_q |v(q,Ω)|²)` of each mode,
/// one column per label — the plottable local-oscillator spectra.
pub fn write_spectral_marginals(
    path: &Path,
    grid: &SpatioSpectralGrid,
    modes: &[&AnalysisMode],
) -> Result<()> {
    write_marginals(path, "spectral-profiles", grid, modes, false)
}

/// Transverse marginal amplitudes `P(q) = √(Σ_Ω |v(q,Ω)|²)` of each mode —
/// the beam profiles seen by the razor-cut analysis.
pub fn write_spatial_marginals(
    path: &Path,
    grid: &SpatioSpectralGrid,
    modes: &[&AnalysisMode],
) -> Result<()> {
    write_marginals(path, "spatial-profiles", grid, modes, true)
}

fn write_marginals(
    path: &Path,
    kind: &str,
    grid: &SpatioSpectralGrid,
    modes: &[&AnalysisMode],
    spatial: bool,
) -> Result<()> {
    for m in modes {
        if m.vector.len() != grid.len() {
            return Err(Error::Input(format!(
                "mode '{}' has dimension {} but the grid has {}",
                m.label,
                m.vector.len(),
                grid.len()
            )));
        }
    }
    let (axis, axis_name): (&[f64], &str) = if spatial {
        (grid.q_points(), "q_rad_per_m")
    } else {
        (grid.omega_points(), "omega_rad_per_s")
    };
    let mut w = csv_writer(path, kind)?;
    let mut header = vec![axis_name.to_string()];
    header.extend(modes.iter().map(|m| m.label.clone()));
    write_row(&mut w, path, header)?;
    let (n_q, n_om) = (grid.n_q(), grid.n_omega());
    for (i, x) in axis.iter().enumerate() {
        let mut row = vec![fmt(*x)];
        for m in modes {
            let acc: f64 = if spatial {
                (0..n_om).map(|io| m.vector[grid.flat_index(i, io)].norm_sqr()).sum()
            } else {
                (0..n_q).map(|iq| m.vector[grid.flat_index(iq, i)].norm_sqr()).sum()
            };
            row.push(fmt(acc.sqrt()));
        }
        write_row(&mut w, path, row)?;
    }
    finish_csv(w, path)
}

// ---------------------------------------------------------------------------
// homodyne traces

/// File stem used for a trace of the given mode label.
pub fn trace_stem(label: &str) -> String {
    format!("trace_{label}")
}

/// Write `trace_<label>.csv` (`time_s,variance_snu`) and its
/// `trace_<label>.meta.json` sidecar; returns the CSV path.
pub fn write_trace(dir: &Path, trace: &HomodyneTrace) -> Result<PathBuf> {
    let stem = trace_stem(&trace.metadata.mode_label);
    let path = dir.join(format!("{stem}.csv"));
    let mut w = csv_writer(&path, "homodyne-trace")?;
    write_row(&mut w, &path, ["time_s", "variance_snu"])?;
    for (t, v) in trace.time_s.iter().zip(&trace.variance_snu) {
        write_row(&mut w, &path, [fmt(*t), fmt(*v)])?;
    }
    finish_csv(w, &path)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        version: u32,
        #[serde(flatten)]
        metadata: &'a TraceMetadata,
    }
    write_json(
        &dir.join(format!("{stem}.meta.json")),
        &Sidecar { version: FORMAT_VERSION, metadata: &trace.metadata },
    )?;
    Ok(path)
}

/// Read a trace CSV back. Metadata comes from the `.meta.json` sidecar
/// when present; otherwise it is derived from `protocol` (the trace length
/// must then be a whole number of `samples_per_period`). Parse failures
/// report the 1-based line number in the file.
pub fn load_trace(path: &Path, label: &str, protocol: &TraceProtocol) -> Result<HomodyneTrace> {
    let file = fs::File::open(path).map_err(|e| io_err(path, "cannot open", e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file));
    {
        let headers = rdr.headers().map_err(|e| io_err(path, "cannot read header of", e))?;
        if headers.iter().collect::<Vec<_>>() != ["time_s", "variance_snu"] {
            return Err(Error::Io(format!(
                "{}: expected header 'time_s,variance_snu', found '{}'",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut time_s = Vec::new();
    let mut variance_snu = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| io_err(path, "cannot read", e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| {
                    Error::Io(format!("{} line {line}: missing {name} field", path.display()))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| {
                    Error::Io(format!("{} line {line}: bad {name} value: {e}", path.display()))
                })
        };
        time_s.push(field(0, "time_s")?);
        variance_snu.push(field(1, "variance_snu")?);
    }
    let sidecar = path.with_file_name(format!(
        "{}.meta.json",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or_default()
    ));
    let metadata = if sidecar.exists() {
        #[derive(Deserialize)]
        struct Sidecar {
            #[allow(dead_code)]
            version: u32,
            #[serde(flatten)]
            metadata: TraceMetadata,
        }
        let s: Sidecar = read_json(&sidecar)?;
        TraceMetadata { mode_label: label.to_string(), ..s.metadata }
    } else {
        let spp = protocol.samples_per_period;
        if spp == 0 || time_s.len() % spp as usize != 0 || time_s.is_empty() {
            return Err(Error::Io(format!(
                "{}: {} samples is not a whole number of periods of {} samples (no sidecar to say otherwise)",
                path.display(),
                time_s.len(),
                spp
            )));
        }
        TraceMetadata {
            mode_label: label.to_string(),
            phase_rate_hz: protocol.phase_rate_hz,
            periods: (time_s.len() / spp as usize) as u32,
            samples_per_period: spp,
            effective_samples: protocol.noise.as_ref().map(|n| n.effective_samples),
            seed: None,
        }
    };
    Ok(HomodyneTrace { time_s, variance_snu, metadata })
}

// ---------------------------------------------------------------------------
// summaries, covariance blocks, eigenanalyses

/// One row of the squeezing summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingRow {
    pub label: String,
    pub squeezed_db: f64,
    pub squeezed_db_se: f64,
    pub antisqueezed_db: f64,
    pub antisqueezed_db_se: f64,
}

/// `label,squeezed_db,…` — the per-mode extrema table.
pub fn write_squeezing_summary(path: &Path, rows: &[SqueezingRow]) -> Result<()> {
    let mut w = csv_writer(path, "squeezing-summary")?;
    write_row(
        &mut w,
        path,
        ["label", "squeezed_db", "squeezed_db_se", "antisqueezed_db", "antisqueezed_db_se"],
    )?;
    for r in rows {
        write_row(
            &mut w,
            path,
            [
                r.label.clone(),
                fmt(r.squeezed_db),
                fmt(r.squeezed_db_se),
                fmt(r.antisqueezed_db),
                fmt(r.antisqueezed_db_se),
            ],
        )?;
    }
    finish_csv(w, path)
}

fn write_labeled_matrix(
    path: &Path,
    kind: &str,
    labels: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    let mut w = csv_writer(path, kind)?;
    let mut header = vec!["label".to_string()];
    header.extend_from_slice(labels);
    write_row(&mut w, path, header)?;
    for i in 0..m.nrows() {
        let mut row = vec![labels[i].clone()];
        for j in 0..m.ncols() {
            row.push(fmt(m[(i, j)]));
        }
        write_row(&mut w, path, row)?;
    }
    finish_csv(w, path)
}

/// Write `<name>_x.csv`, `<name>_p.csv` and the standard-error companions
/// `<name>_x_sigma.csv`, `<name>_p_sigma.csv` (zeros for exact blocks).
pub fn write_covariance_blocks(dir: &Path, name: &str, blocks: &CovarianceBlocks) -> Result<()> {
    let l = &blocks.basis_labels;
    write_labeled_matrix(&dir.join(format!("{name}_x.csv")), "covariance-block", l, &blocks.v_x)?;
    write_labeled_matrix(&dir.join(format!("{name}_p.csv")), "covariance-block", l, &blocks.v_p)?;
    write_labeled_matrix(
        &dir.join(format!("{name}_x_sigma.csv")),
        "covariance-block-sigma",
        l,
        &blocks.sigma_x,
    )?;
    write_labeled_matrix(
        &dir.join(format!("{name}_p_sigma.csv")),
        "covariance-block-sigma",
        l,
        &blocks.sigma_p,
    )
}

/// `index,x_value,x_sigma,p_value,p_sigma` — the joint-quadrature
/// eigenvalue spectrum (X ascending, P descending, as stored).
pub fn write_eigen_csv(path: &Path, analysis: &BlockEigenanalysis) -> Result<()> {
    let mut w = csv_writer(path, "block-eigenvalues")?;
    write_row(&mut w, path, ["index", "x_value", "x_sigma", "p_value", "p_sigma"])?;
    for k in 0..analysis.x_eigenvalues.len() {
        write_row(
            &mut w,
            path,
            [
                k.to_string(),
                fmt(analysis.x_eigenvalues[k]),
                fmt(analysis.x_value_sigma[k]),
                fmt(analysis.p_eigenvalues[k]),
                fmt(analysis.p_value_sigma[k]),
            ],
        )?;
    }
    finish_csv(w, path)
}

// ---------------------------------------------------------------------------
// ingest manifest

/// Declares a covariance measurement set: the basis mode labels and one
/// trace CSV per basis mode and per pair sum-mode (keys `"A"` and `"A+B"`),
/// with paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub version: u32,
    pub basis: Vec<String>,
    pub traces: BTreeMap<String, String>,
}

/// Manifest key for the sum-mode of basis entries `a` and `b`.
pub fn pair_key(a: &str, b: &str) -> String {
    format!("{a}+{b}")
}

impl IngestManifest {
    /// Build a manifest for traces written by [`write_trace`]: diagonals in
    /// basis order, then pair sum-modes row-major (the order
    /// `simulate_covariance_with_traces` returns).
    pub fn for_simulated(basis: &[String], traces: &[HomodyneTrace]) -> Result<IngestManifest> {
        let m = basis.len();
        if traces.len() != m * (m + 1) / 2 {
            return Err(Error::Input(format!(
                "{} traces cannot cover a {m}-mode basis ({} needed)",
                traces.len(),
                m * (m + 1) / 2
            )));
        }
        let mut map = BTreeMap::new();
        let mut it = traces.iter();
        for label in basis {
            let t = it.next().expect("length checked");
            map.insert(label.clone(), format!("{}.csv", trace_stem(&t.metadata.mode_label)));
        }
        for i in 0..m {
            for j in i + 1..m {
                let t = it.next().expect("length checked");
                map.insert(
                    pair_key(&basis[i], &basis[j]),
                    format!("{}.csv", trace_stem(&t.metadata.mode_label)),
                );
            }
        }
        Ok(IngestManifest { version: FORMAT_VERSION, basis: basis.to_vec(), traces: map })
    }

    /// Keys that the basis demands but the manifest lacks.
    pub fn missing_keys(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for (i, a) in self.basis.iter().enumerate() {
            if !self.traces.contains_key(a) {
                missing.push(a.clone());
            }
            for b in &self.basis[i + 1..] {
                let key = pair_key(a, b);
                if !self.traces.contains_key(&key) {
                    missing.push(key);
                }
            }
        }
        missing
    }
}

pub fn read_manifest(path: &Path) -> Result<IngestManifest> {
    let manifest: IngestManifest = read_json(path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Io(format!(
            "{}: manifest version {} (this build reads v{FORMAT_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    if manifest.basis.is_empty() {
        return Err(Error::Input(format!("{}: manifest basis is empty", path.display())));
    }
    let missing = manifest.missing_keys();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "{}: manifest is missing trace entries for: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    Ok(manifest)
}
