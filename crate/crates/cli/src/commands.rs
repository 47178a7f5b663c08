//! Subcommand implementations.

use std::path::{Path, PathBuf};

use probspec::filter::Simulation;
use probspec::grid::{SpatialGrid, SpectralTransform};
use serde::Serialize;

use crate::config::{PdeName, ReferenceKind, RunConfig, SpectrumMode};
use crate::error::{numerical, CliError, CliResult};
use crate::scenario::{Scenario, Truth};
use crate::store::{
    fine_csv, metrics_csv, read_fine, read_metrics, read_state, sha256_hex, state_csv,
    write_atomic, FieldSnapshot, Kind, Manifest, MetricsRow, SpectrumTable, Status, Store,
};
use crate::svg::{Band, Chart, Series, PALETTE};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "PROBSPEC_OUT_ROOT";

pub fn default_out(config: &Path, seed: u64) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    root.join(format!("{stem}-seed{seed}"))
}

pub fn rel_l2(a: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(truth).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = truth.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub spectrum_file: Option<PathBuf>,
}

/// Executes a configured simulation, persisting each step as it
/// completes. Returns the run directory.
pub fn run(args: &RunArgs) -> CliResult<PathBuf> {
    let (mut cfg, bytes) = RunConfig::load(&args.config)?;
    if let Some(f) = &args.spectrum_file {
        cfg.spectrum.mode = SpectrumMode::File;
        cfg.spectrum.file = Some(f.clone());
    }
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.config, seed));
    let n = cfg.time.steps;
    let scenario = Scenario::new(cfg)?;
    let cfg = &scenario.cfg;
    let grid = scenario.grid;
    let truth = scenario.reference()?;
    let spectra = match cfg.spectrum.mode {
        SpectrumMode::File => {
            let path = cfg.spectrum.file.as_ref().expect("validated");
            let table = SpectrumTable::read(path)?;
            let spectra = table.for_steps(n)?;
            let want = scenario.initial.spectrum.grid();
            if let Some(s) = spectra.iter().find(|s| s.grid() != want) {
                return Err(CliError::Input(format!(
                    "{}: spectrum grid (L={}, l_max={}) differs from the run's (L={}, l_max={})",
                    path.display(),
                    s.grid().len(),
                    s.grid().l_max(),
                    want.len(),
                    want.l_max()
                )));
            }
            Some(spectra)
        }
        SpectrumMode::Truth => Some(scenario.truth_spectra(truth.as_ref().expect("validated"), 1..=n)?),
        _ => None,
    };
    let baseline = scenario.baseline();
    let transform = SpectralTransform::new(grid);
    let truth_at = |i: usize| truth.as_ref().map(|t| t.restrict(i, grid)).transpose();

    let mut store = Store::create(
        &out,
        Manifest {
            kind: Kind::Run,
            config_sha256: sha256_hex(&bytes),
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            grid_size: grid.size(),
            steps_planned: n,
            steps_completed: 0,
            status: Status::Running,
            spectrum_file: args.spectrum_file.clone(),
        },
        &bytes,
    )?;
    let initial = &scenario.initial;
    let half = grid.half_len();
    store.write_step_file("state", 0, &state_csv(0, initial, &vec![0.0; half]))?;
    let field0 = FieldSnapshot {
        x: grid.positions(),
        mean: transform.synthesize(&initial.component(0)).map_err(numerical)?,
        std: vec![0.0; grid.size()],
        truth: truth_at(0)?,
        baseline: baseline[0].clone(),
    };
    store.write_step_file("field", 0, &field0.to_csv(0, 0.0))?;
    store.write_step_file("spectrum", 0, &initial.spectrum.to_csv(Some(&scenario.hyper)))?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    write_atomic(&store.metrics_path(), metrics_csv(&rows).as_bytes())?;

    let opts = scenario.run_options(scenario.schedule(spectra), seed);
    let mut sim = Simulation::new(&scenario.pde, opts, initial.clone()).map_err(crate::error::config_err)?;
    while !sim.is_finished() {
        let i = sim.steps_done() + 1;
        let result = match sim.advance() {
            Ok(r) => r,
            Err(e) => {
                store.manifest.status = Status::Aborted;
                store.write_manifest()?;
                return Err(CliError::Numerical(format!("run aborted at step {i}: {e}")));
            }
        };
        let state = &result.state;
        let mean = transform.synthesize(&state.component(0)).map_err(numerical)?;
        let truth_i = truth_at(i)?;
        let field = FieldSnapshot {
            x: grid.positions(),
            std: result.field_std(),
            truth: truth_i.clone(),
            baseline: baseline[i].clone(),
            mean,
        };
        store.write_step_file("state", i, &state_csv(i, state, &result.field_var))?;
        store.write_step_file("field", i, &field.to_csv(i, state.time))?;
        store.write_step_file("spectrum", i, &state.spectrum.to_csv(Some(&scenario.hyper)))?;
        if result.flagged {
            log::warn!(
                "step {i} flagged: {} iterations, gradient norm {:.3e}",
                result.telemetry.iterations,
                result.telemetry.grad_norm
            );
        }
        rows.push(MetricsRow {
            step: i,
            time: state.time,
            rel_l2_error: truth_i.as_ref().map(|t| rel_l2(&field.mean, t)),
            total_power: state.spectrum.resolved_power(grid.size()).map_err(numerical)?,
            optimizer_iters: result.telemetry.iterations,
            grad_norm: result.telemetry.grad_norm,
            flagged: result.flagged,
        });
        write_atomic(&store.metrics_path(), metrics_csv(&rows).as_bytes())?;
        store.manifest.steps_completed = i;
        store.write_manifest()?;
        log::info!(
            "step {i}/{n}: objective {:.6e}, {} iterations{}",
            result.objective,
            result.telemetry.iterations,
            rows.last().and_then(|r| r.rel_l2_error).map(|e| format!(", rel. error {e:.3e}")).unwrap_or_default()
        );
    }
    store.manifest.status = Status::Complete;
    store.write_manifest()?;
    Ok(out)
}

/// Computes the configured reference solution and stores it with
/// `kind: reference`.
pub fn reference(config: &Path, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let (cfg, bytes) = RunConfig::load(config)?;
    if cfg.reference.kind == ReferenceKind::None {
        return Err(CliError::Config("at 'reference.kind': a reference run needs analytic or rk4".into()));
    }
    let out = out.unwrap_or_else(|| {
        let mut p = default_out(config, cfg.run.seed).into_os_string();
        p.push("-reference");
        p.into()
    });
    let seed = cfg.run.seed;
    let scenario = Scenario::new(cfg)?;
    let truth = scenario.reference()?.expect("reference kind is set");
    let mut store = Store::create(
        &out,
        Manifest {
            kind: Kind::Reference,
            config_sha256: sha256_hex(&bytes),
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            grid_size: truth.k_ref,
            steps_planned: scenario.cfg.time.steps,
            steps_completed: 0,
            status: Status::Running,
            spectrum_file: None,
        },
        &bytes,
    )?;
    for (i, (t, v)) in truth.times.iter().zip(&truth.values).enumerate() {
        store.write_step_file("fine", i, &fine_csv(i, *t, v))?;
    }
    store.manifest.steps_completed = scenario.cfg.time.steps;
    store.manifest.status = Status::Complete;
    store.write_manifest()?;
    Ok(out)
}

fn parse_config(store: &Store) -> CliResult<RunConfig> {
    let bytes = store.config_bytes()?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))?;
    RunConfig::parse(&text)
}

/// Loads a stored reference and its configuration.
pub fn load_reference(dir: &Path) -> CliResult<(RunConfig, Truth)> {
    let store = Store::open(dir)?;
    if store.manifest.kind != Kind::Reference {
        return Err(CliError::Input(format!("{} is not a reference directory", dir.display())));
    }
    let cfg = parse_config(&store)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for i in 0..=store.manifest.steps_completed {
        let (t, v) = read_fine(&store.step_path("fine", i))?;
        times.push(t);
        values.push(v);
    }
    Ok((
        cfg,
        Truth {
            k_ref: store.manifest.grid_size,
            times,
            values,
        },
    ))
}

/// Parses `A..B` (inclusive; empty when `B < A`) or a single step `A`.
pub fn parse_steps(text: &str) -> CliResult<std::ops::RangeInclusive<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| CliError::Input(format!("bad step range '{text}': {e}")))
    };
    match text.split_once("..") {
        Some((a, b)) => Ok(num(a)?..=num(b.trim_start_matches('='))?),
        None => {
            let a = num(text)?;
            Ok(a..=a)
        }
    }
}

/// Estimates one spectrum per true transition of a stored reference.
pub fn spectrum_from_truth(reference: &Path, steps: &str, out: &Path) -> CliResult<usize> {
    let range = parse_steps(steps)?;
    let (cfg, truth) = load_reference(reference)?;
    let scenario = Scenario::new(cfg)?;
    let spectra = if range.is_empty() {
        Vec::new()
    } else {
        scenario.truth_spectra(&truth, range.clone())?
    };
    let table = SpectrumTable {
        steps: range.filter(|_| !spectra.is_empty()).collect(),
        hyper: Some(scenario.hyper),
        spectra,
    };
    write_atomic(out, table.to_csv().as_bytes())?;
    Ok(table.steps.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepComparison {
    pub step: usize,
    pub time: f64,
    pub rel_l2_error: f64,
    pub calibration_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub grid_size: usize,
    pub steps: Vec<StepComparison>,
    /// Fraction of all compared points with `|residual| <= 3 std`.
    pub calibration_fraction: f64,
}

/// Compares the posterior means of a run with a reference directory, a
/// second run or the analytic diffusion solution. Writes the point table to
/// `out` and the summary next to it as `<stem>.summary.json`.
pub fn compare(run_dir: &Path, reference: &str, out: &Path) -> CliResult<ComparisonSummary> {
    let store = Store::open(run_dir)?;
    if store.manifest.kind != Kind::Run {
        return Err(CliError::Input(format!("{} is not a run directory", run_dir.display())));
    }
    let cfg = parse_config(&store)?;
    let grid = SpatialGrid::new(cfg.grid.k).map_err(crate::error::config_err)?;
    let n = store.manifest.steps_completed;
    let snapshots = (0..=n)
        .map(|i| FieldSnapshot::read(&store.step_path("field", i)))
        .collect::<CliResult<Vec<_>>>()?;
    let run_times = cfg.times();
    let truths: Vec<Vec<f64>> = if reference == "analytic" {
        if cfg.pde.name != PdeName::Diffusion {
            return Err(CliError::Input("the analytic reference exists for diffusion only".into()));
        }
        let mut c = cfg.clone();
        c.reference.kind = ReferenceKind::Analytic;
        let truth = Scenario::new(c)?.reference()?.expect("analytic");
        (0..=n).map(|i| truth.restrict(i, grid)).collect::<CliResult<_>>()?
    } else {
        let dir = Path::new(reference);
        let other = Store::open(dir)?;
        match other.manifest.kind {
            Kind::Reference => {
                let (_, truth) = load_reference(dir)?;
                if truth.k_ref % grid.size() != 0 {
                    return Err(CliError::Input(format!(
                        "mismatched grids: reference K_ref = {} is not a multiple of K = {}",
                        truth.k_ref,
                        grid.size()
                    )));
                }
                if truth.values.len() <= n {
                    return Err(CliError::Input(format!(
                        "reference has {} steps, run has {n}",
                        truth.values.len() - 1
                    )));
                }
                for i in 0..=n {
                    if (truth.times[i] - run_times[i]).abs() > 1e-12 * run_times[i].abs().max(1.0) {
                        return Err(CliError::Input(format!(
                            "time of step {i} differs: run {} vs reference {}",
                            run_times[i], truth.times[i]
                        )));
                    }
                }
                (0..=n).map(|i| truth.restrict(i, grid)).collect::<CliResult<_>>()?
            }
            Kind::Run => {
                if other.manifest.grid_size != grid.size() {
                    return Err(CliError::Input(format!(
                        "mismatched grids: K = {} vs K = {}",
                        grid.size(),
                        other.manifest.grid_size
                    )));
                }
                if other.manifest.steps_completed < n {
                    return Err(CliError::Input(format!(
                        "other run has {} steps, this run has {n}",
                        other.manifest.steps_completed
                    )));
                }
                (0..=n)
                    .map(|i| FieldSnapshot::read(&other.step_path("field", i)).map(|f| f.mean))
                    .collect::<CliResult<_>>()?
            }
        }
    };
    let mut csv = String::from("step,x,truth,mean,residual,posterior_std\n");
    let mut steps = Vec::new();
    let (mut inside, mut total) = (0usize, 0usize);
    for i in 1..=n {
        let f = &snapshots[i];
        let t = &truths[i];
        let mut ok = 0;
        for j in 0..f.x.len() {
            let r = t[j] - f.mean[j];
            ok += usize::from(r.abs() <= 3.0 * f.std[j]);
            csv.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                crate::store::fmt(f.x[j]),
                crate::store::fmt(t[j]),
                crate::store::fmt(f.mean[j]),
                crate::store::fmt(r),
                crate::store::fmt(f.std[j])
            ));
        }
        inside += ok;
        total += f.x.len();
        steps.push(StepComparison {
            step: i,
            time: run_times[i],
            rel_l2_error: rel_l2(&f.mean, t),
            calibration_fraction: ok as f64 / f.x.len() as f64,
        });
    }
    let summary = ComparisonSummary {
        grid_size: grid.size(),
        steps,
        calibration_fraction: if total == 0 { 1.0 } else { inside as f64 / total as f64 },
    };
    write_atomic(out, csv.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&summary_path(out), json.as_bytes())?;
    Ok(summary)
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Step,
    Evolution,
    Spectra,
    Calibration,
}

/// Renders a stored run as SVG. `step` defaults to the last completed one.
pub fn plot(run_dir: &Path, kind: PlotKind, out: &Path, step: Option<usize>) -> CliResult<()> {
    let store = Store::open(run_dir)?;
    let metrics = read_metrics(&store.metrics_path())?;
    if metrics.is_empty() {
        return Err(CliError::Input(format!("{}: metrics table is empty", run_dir.display())));
    }
    let n = store.manifest.steps_completed;
    let step = step.unwrap_or(n);
    if step > n {
        return Err(CliError::Input(format!("step {step} not in the run (0..={n})")));
    }
    let k = store.manifest.grid_size;
    let series = |label: &str, points: Vec<(f64, f64)>, color: usize, dashed: bool| Series {
        label: label.into(),
        points,
        color: PALETTE[color % PALETTE.len()].into(),
        dashed,
    };
    let chart = match kind {
        PlotKind::Step => {
            let f = FieldSnapshot::read(&store.step_path("field", step))?;
            let mut c = Chart {
                title: format!("step {step}"),
                x_label: "x".into(),
                y_label: "s(x)".into(),
                ..Default::default()
            };
            c.bands.push(Band {
                label: "mean ± 2 std".into(),
                x: f.x.clone(),
                lower: f.mean.iter().zip(&f.std).map(|(m, s)| m - 2.0 * s).collect(),
                upper: f.mean.iter().zip(&f.std).map(|(m, s)| m + 2.0 * s).collect(),
                color: PALETTE[0].into(),
            });
            let pts = |v: &[f64]| f.x.iter().copied().zip(v.iter().copied()).collect();
            if let Some(t) = &f.truth {
                c.series.push(series("truth", pts(t), 2, false));
            }
            if let Some(b) = &f.baseline {
                c.series.push(series("trapezoidal", pts(b), 3, true));
            }
            c.series.push(series("posterior mean", pts(&f.mean), 0, false));
            c
        }
        PlotKind::Evolution => {
            let mut c = Chart {
                title: "evolution".into(),
                x_label: "step".into(),
                y_label: "value".into(),
                log_y: true,
                ..Default::default()
            };
            let errors: Vec<_> = metrics
                .iter()
                .filter_map(|r| r.rel_l2_error.map(|e| (r.step as f64, e)))
                .collect();
            if !errors.is_empty() {
                c.series.push(series("rel. L2 error", errors, 1, false));
            }
            c.series.push(series(
                "resolved power",
                metrics.iter().map(|r| (r.step as f64, r.total_power)).collect(),
                0,
                false,
            ));
            c
        }
        PlotKind::Spectra => {
            let nyquist = (k as f64 / 2.0).ln();
            let mut c = Chart {
                title: "log spectra".into(),
                x_label: "ln |k|".into(),
                y_label: "tau = ln sigma".into(),
                vlines: vec![(nyquist, "largest grid mode".into())],
                ..Default::default()
            };
            let l_end = nyquist + 1.0;
            // at most eight curves, evenly spread over the run
            let picks: Vec<usize> = if n < 8 {
                (0..=n).collect()
            } else {
                (0..8).map(|j| j * n / 7).collect()
            };
            for (ci, &i) in picks.iter().enumerate() {
                let text = std::fs::read_to_string(store.step_path("spectrum", i))
                    .map_err(|e| CliError::io(store.step_path("spectrum", i), e))?;
                let (spec, _) = probspec::spectrum::LogSpectrum::from_csv(&text)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let g = spec.grid();
                let pts = (0..g.len())
                    .map(|m| (g.l(m), spec.tau()[m]))
                    .filter(|(l, _)| *l <= l_end)
                    .collect();
                c.series.push(series(&format!("step {i}"), pts, ci, false));
            }
            c
        }
        PlotKind::Calibration => {
            let f = FieldSnapshot::read(&store.step_path("field", step))?;
            let t = f.truth.as_ref().ok_or_else(|| {
                CliError::Input("calibration plot needs a run with a reference".into())
            })?;
            let resid: Vec<_> = f.x.iter().zip(t.iter().zip(&f.mean)).map(|(x, (a, b))| (*x, a - b)).collect();
            Chart {
                title: format!("residual, step {step}"),
                x_label: "x".into(),
                y_label: "truth - mean".into(),
                bands: vec![Band {
                    label: "± 3 std".into(),
                    x: f.x.clone(),
                    lower: f.std.iter().map(|s| -3.0 * s).collect(),
                    upper: f.std.iter().map(|s| 3.0 * s).collect(),
                    color: PALETTE[0].into(),
                }],
                series: vec![series("residual", resid, 1, false)],
                ..Default::default()
            }
        }
    };
    write_atomic(out, chart.render().as_bytes())
}

/// Reads back a stored state snapshot with its spectrum.
pub fn load_state(run_dir: &Path, step: usize) -> CliResult<(probspec::prior::SimState, Vec<f64>)> {
    let store = Store::open(run_dir)?;
    let path = store.step_path("spectrum", step);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let (spec, _) = probspec::spectrum::LogSpectrum::from_csv(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    read_state(&store.step_path("state", step), spec)
}
