//! Run directories: manifest, config copy, per-step CSV snapshots and the
//! metrics table. Every file is written to a temporary name and renamed, so
//! readers never see partial files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use probspec::grid::SpatialGrid;
use probspec::linalg::CVec;
use probspec::prior::{ModeState, SimState};
use probspec::spectrum::{LogGrid, LogSpectrum, SpectrumHyper};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, CliError, CliResult};

pub const CONFIG_FILE: &str = "config.cfg";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STEPS_DIR: &str = "steps";

/// Floats with 17 significant digits: exact round trip.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::io(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Run,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: Kind,
    pub config_sha256: String,
    pub seed: u64,
    pub code_version: String,
    pub grid_size: usize,
    pub steps_planned: usize,
    pub steps_completed: usize,
    pub status: Status,
    /// Spectrum table given on the command line instead of the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_file: Option<PathBuf>,
}

/// Key-value pairs of a `# key=value ...` header line.
fn header_fields(line: &str) -> BTreeMap<String, String> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn header_num<T: std::str::FromStr>(
    fields: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> CliResult<T> {
    fields
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Input(format!("{}: header lacks a valid '{key}'", path.display())))
}

/// Data rows of a CSV with `#` comment lines and a column header; empty
/// cells read as `None`.
fn read_rows(path: &Path, columns: &[&str]) -> CliResult<Vec<Vec<Option<f64>>>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if !columns.is_empty() && header.iter().collect::<Vec<_>>() != columns {
        return Err(CliError::Input(format!(
            "{}: expected columns {columns:?}, found {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| {
                        CliError::Input(format!("{}: bad number '{cell}': {e}", path.display()))
                    })
                }
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn need(v: Option<f64>, path: &Path) -> CliResult<f64> {
    v.ok_or_else(|| CliError::Input(format!("{}: missing required value", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub time: f64,
    pub rel_l2_error: Option<f64>,
    pub total_power: f64,
    pub optimizer_iters: usize,
    pub grad_norm: f64,
    pub flagged: bool,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "time",
    "rel_l2_error_vs_reference",
    "total_power",
    "optimizer_iters",
    "grad_norm",
    "flagged",
];

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            fmt(r.time),
            fmt_opt(r.rel_l2_error),
            fmt(r.total_power),
            r.optimizer_iters,
            fmt(r.grad_norm),
            u8::from(r.flagged)
        );
    }
    out
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRow>> {
    read_rows(path, &METRICS_COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(MetricsRow {
                step: need(r[0], path)? as usize,
                time: need(r[1], path)?,
                rel_l2_error: r[2],
                total_power: need(r[3], path)?,
                optimizer_iters: need(r[4], path)? as usize,
                grad_norm: need(r[5], path)?,
                flagged: need(r[6], path)? != 0.0,
            })
        })
        .collect()
}

/// Grid-space snapshot of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub baseline: Option<Vec<f64>>,
}

pub const FIELD_COLUMNS: [&str; 5] = ["x", "mean", "std", "truth", "baseline"];

impl FieldSnapshot {
    pub fn to_csv(&self, step: usize, time: f64) -> String {
        let mut out = format!("# step={step} time={}\n", fmt(time));
        out.push_str(&FIELD_COLUMNS.join(","));
        out.push('\n');
        for j in 0..self.x.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt(self.x[j]),
                fmt(self.mean[j]),
                fmt(self.std[j]),
                fmt_opt(self.truth.as_ref().map(|t| t[j])),
                fmt_opt(self.baseline.as_ref().map(|b| b[j]))
            );
        }
        out
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let rows = read_rows(path, &FIELD_COLUMNS)?;
        let col = |c: usize| -> CliResult<Vec<f64>> { rows.iter().map(|r| need(r[c], path)).collect() };
        let opt_col = |c: usize| -> Option<Vec<f64>> { rows.iter().map(|r| r[c]).collect() };
        Ok(Self {
            x: col(0)?,
            mean: col(1)?,
            std: col(2)?,
            truth: opt_col(3),
            baseline: opt_col(4),
        })
    }
}

/// State snapshot: `u` and `v` of every half-spectrum mode as re/im column
/// pairs, plus the posterior field variance per mode.
pub fn state_csv(step: usize, state: &SimState, field_var: &[f64]) -> String {
    let o = state.order;
    let mut out = format!(
        "# step={step} time={} K={} order={o}\n# lineage={}\n",
        fmt(state.time),
        state.grid.size(),
        state.lineage
    );
    let mut cols = vec!["k".to_string()];
    for c in 0..=o {
        cols.push(format!("u{c}_re"));
        cols.push(format!("u{c}_im"));
    }
    for c in 1..=o {
        cols.push(format!("v{c}_re"));
        cols.push(format!("v{c}_im"));
    }
    cols.push("field_var".into());
    out.push_str(&cols.join(","));
    out.push('\n');
    for (k, m) in state.modes.iter().enumerate() {
        let mut row = vec![k.to_string()];
        for z in m.u.iter().chain(m.v.iter()) {
            row.push(fmt(z.re));
            row.push(fmt(z.im));
        }
        row.push(fmt(field_var[k]));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a state snapshot; the spectrum is supplied by the caller.
pub fn read_state(path: &Path, spectrum: LogSpectrum) -> CliResult<(SimState, Vec<f64>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let fields = header_fields(lines.next().unwrap_or_default());
    let lineage = lines
        .next()
        .and_then(|l| l.strip_prefix("# lineage="))
        .unwrap_or_default()
        .to_string();
    let k: usize = header_num(&fields, "K", path)?;
    let o: usize = header_num(&fields, "order", path)?;
    let time: f64 = header_num(&fields, "time", path)?;
    let grid = SpatialGrid::new(k).map_err(config_err)?;
    let rows = read_rows(path, &[])?;
    if rows.len() != grid.half_len() || rows.iter().any(|r| r.len() != 4 * o + 4) {
        return Err(CliError::Input(format!("{}: malformed state table", path.display())));
    }
    let mut modes = Vec::with_capacity(rows.len());
    let mut var = Vec::with_capacity(rows.len());
    for r in &rows {
        let z = |i: usize| -> CliResult<Complex64> {
            Ok(Complex64::new(need(r[1 + 2 * i], path)?, need(r[2 + 2 * i], path)?))
        };
        let u = (0..=o).map(z).collect::<CliResult<Vec<_>>>()?;
        let v = (o + 1..=2 * o).map(z).collect::<CliResult<Vec<_>>>()?;
        modes.push(ModeState {
            u: CVec::from_vec(u),
            v: CVec::from_vec(v),
        });
        var.push(need(r[4 * o + 3], path)?);
    }
    let state = SimState {
        time,
        grid,
        order: o,
        modes,
        spectrum,
        lineage,
    };
    state.validate().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((state, var))
}

/// Spectra of several steps sharing one log grid: `step,tau_0,...` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    pub steps: Vec<usize>,
    pub spectra: Vec<LogSpectrum>,
    pub hyper: Option<SpectrumHyper>,
}

impl SpectrumTable {
    /// An empty table serializes to an empty file.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.spectra.first() else {
            return String::new();
        };
        let grid = first.grid();
        let mut out = format!(
            "# L={} l_max={} sigma0={}",
            grid.len(),
            fmt(grid.l_max()),
            fmt(first.sigma0())
        );
        if let Some(h) = &self.hyper {
            let _ = write!(
                out,
                " sigma_tau={} offset={} slope={} offset_std={} slope_std={} n_max={}",
                fmt(h.sigma_tau),
                fmt(h.offset),
                fmt(h.slope),
                fmt(h.offset_std),
                fmt(h.slope_std),
                h.n_max
            );
        }
        out.push_str("\nstep");
        for m in 0..grid.len() {
            let _ = write!(out, ",tau_{m}");
        }
        out.push('\n');
        for (step, s) in self.steps.iter().zip(&self.spectra) {
            out.push_str(&step.to_string());
            for t in s.tau() {
                out.push(',');
                out.push_str(&fmt(*t));
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        if text.trim().is_empty() {
            return Ok(Self {
                steps: Vec::new(),
                spectra: Vec::new(),
                hyper: None,
            });
        }
        let fields = header_fields(text.lines().next().unwrap_or_default());
        let len: usize = header_num(&fields, "L", path)?;
        let l_max: f64 = header_num(&fields, "l_max", path)?;
        let sigma0: f64 = header_num(&fields, "sigma0", path)?;
        let bad = |e: probspec::Error| CliError::Input(format!("{}: {e}", path.display()));
        let grid = LogGrid::new(len, l_max).map_err(bad)?;
        let hyper = if fields.contains_key("sigma_tau") {
            Some(SpectrumHyper {
                sigma_tau: header_num(&fields, "sigma_tau", path)?,
                offset: header_num(&fields, "offset", path)?,
                slope: header_num(&fields, "slope", path)?,
                offset_std: header_num(&fields, "offset_std", path)?,
                slope_std: header_num(&fields, "slope_std", path)?,
                n_max: header_num(&fields, "n_max", path)?,
            })
        } else {
            None
        };
        let mut steps = Vec::new();
        let mut spectra = Vec::new();
        for r in read_rows(path, &[])? {
            if r.len() != len + 1 {
                return Err(CliError::Input(format!(
                    "{}: row has {} values, expected {}",
                    path.display(),
                    r.len(),
                    len + 1
                )));
            }
            steps.push(need(r[0], path)? as usize);
            let tau = r[1..].iter().map(|v| need(*v, path)).collect::<CliResult<Vec<_>>>()?;
            spectra.push(LogSpectrum::new(grid, tau, Some(sigma0)).map_err(bad)?);
        }
        Ok(Self {
            steps,
            spectra,
            hyper,
        })
    }

    /// Spectra for steps `1..=n` in order.
    pub fn for_steps(&self, n: usize) -> CliResult<Vec<LogSpectrum>> {
        (1..=n)
            .map(|i| {
                self.steps
                    .iter()
                    .position(|&s| s == i)
                    .map(|p| self.spectra[p].clone())
                    .ok_or_else(|| CliError::Input(format!("spectrum file has no row for step {i}")))
            })
            .collect()
    }
}

/// Fine-grid reference values at one output time.
pub fn fine_csv(i: usize, time: f64, values: &[f64]) -> String {
    let k = values.len();
    let mut out = format!("# step={i} time={} K_ref={k}\nx,value\n", fmt(time));
    for (j, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", fmt(j as f64 / k as f64), fmt(*v));
    }
    out
}

pub fn read_fine(path: &Path) -> CliResult<(f64, Vec<f64>)> {
    let text = read_text(path)?;
    let fields = header_fields(text.lines().next().unwrap_or_default());
    let time = header_num(&fields, "time", path)?;
    let values = read_rows(path, &["x", "value"])?
        .into_iter()
        .map(|r| need(r[1], path))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((time, values))
}

/// A run or reference directory.
#[derive(Debug, Clone)]
pub struct Store {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Store {
    /// Creates the directory layout and writes the config copy and an
    /// initial manifest. Refuses to overwrite a directory holding another
    /// run's manifest.
    pub fn create(dir: &Path, manifest: Manifest, config: &[u8]) -> CliResult<Self> {
        let steps = dir.join(STEPS_DIR);
        fs::create_dir_all(&steps).map_err(|e| CliError::io(&steps, e))?;
        // stale step files of an earlier run would break contiguity
        for entry in fs::read_dir(&steps).map_err(|e| CliError::io(&steps, e))? {
            let path = entry.map_err(|e| CliError::io(&steps, e))?.path();
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            fs::remove_file(&metrics).map_err(|e| CliError::io(&metrics, e))?;
        }
        write_atomic(&dir.join(CONFIG_FILE), config)?;
        let store = Self {
            dir: dir.to_path_buf(),
            manifest,
        };
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_str(&read_text(&path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let store = Self {
            dir: dir.to_path_buf(),
            manifest,
        };
        let config = store.config_bytes()?;
        if sha256_hex(&config) != store.manifest.config_sha256 {
            return Err(CliError::Input(format!(
                "{}: stored config does not match the manifest hash",
                dir.display()
            )));
        }
        Ok(store)
    }

    pub fn config_bytes(&self) -> CliResult<Vec<u8>> {
        let path = self.dir.join(CONFIG_FILE);
        fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_manifest(&self) -> CliResult<()> {
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn step_path(&self, prefix: &str, i: usize) -> PathBuf {
        self.dir.join(STEPS_DIR).join(format!("{prefix}_{i:05}.csv"))
    }

    pub fn write_step_file(&self, prefix: &str, i: usize, text: &str) -> CliResult<()> {
        write_atomic(&self.step_path(prefix, i), text.as_bytes())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }
}
