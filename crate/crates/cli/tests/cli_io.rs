use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use probspec_cli::commands::{self, parse_steps};
use probspec_cli::config::RunConfig;
use probspec_cli::store::{metrics_csv, read_metrics, state_csv, FieldSnapshot, SpectrumTable};

const SMALL: &str = r#"
grid.K = 32
time.steps = 2
time.delta = 0.04
pde.name = "diffusion"
pde.nu = 0.01
spectrum.mode = "fixed"
spectrum.exponent = -6.0
spectrum.amplitude = 50.0
sampling.v_mode = "mean"
run.seed = 3
reference.kind = "analytic"
"#;

fn probspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probspec"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_small(dir: &Path, name: &str, text: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.cfg"), text);
    let out = dir.join(name);
    let o = probspec(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn config_errors_name_the_offending_key_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (text, needle) in [
        (format!("{SMALL}\ngrid.KK = 3"), "KK"),
        (SMALL.replace("grid.K = 32", "grid.K = 31"), "K"),
        (SMALL.replace("time.delta = 0.04", "time.delta = -1.0"), "delta"),
        (SMALL.replace("\"fixed\"", "\"file\""), "file"),
    ] {
        let cfg = write_config(dir.path(), "bad.cfg", &text);
        let o = probspec(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle));
    }
    let o = probspec(&["run", "--config", s(&dir.path().join("missing.cfg"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn parsed_config_matches_the_file() {
    let cfg = RunConfig::parse(&SMALL.replace("time.delta = 0.04", "time.delta = [0.01, 0.03]")).unwrap();
    assert_eq!(cfg.grid.k, 32);
    assert_eq!(cfg.deltas(), vec![0.01, 0.03]);
    assert!((cfg.times()[2] - 0.04).abs() < 1e-15);
    assert!(RunConfig::parse(&SMALL.replace("time.delta = 0.04", "time.delta = [0.01]")).is_err());
}

#[test]
fn stored_files_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "run", SMALL);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\"") && manifest.contains("\"steps_completed\": 2"));

    let metrics = out.join("metrics.csv");
    let rows = read_metrics(&metrics).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(metrics_csv(&rows), std::fs::read_to_string(&metrics).unwrap());

    for step in 0..=2 {
        let path = out.join(format!("steps/state_{step:05}.csv"));
        let (state, var) = commands::load_state(&out, step).unwrap();
        assert_eq!(state_csv(step, &state, &var), std::fs::read_to_string(&path).unwrap());

        let path = out.join(format!("steps/field_{step:05}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        let snap = FieldSnapshot::read(&path).unwrap();
        assert_eq!(snap.to_csv(step, state.time), text);
        assert_eq!(snap.x.len(), 32);
    }
}

#[test]
fn compare_against_analytic_and_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(dir.path(), "a", SMALL);
    let b = run_small(dir.path(), "b", &SMALL.replace("grid.K = 32", "grid.K = 16"));
    let table = dir.path().join("cmp.csv");
    let summary = commands::compare(&a, "analytic", &table).unwrap();
    assert_eq!(summary.steps.len(), 2);
    assert!(summary.steps.iter().all(|c| c.rel_l2_error < 1e-2));
    assert!(commands::summary_path(&table).exists());
    let rows = std::fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 32);

    let o = probspec(&["compare", "--run", s(&a), "--reference", s(&b), "--out", s(&table)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn plots_render_and_reject_empty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_small(dir.path(), "run", SMALL);
    for kind in ["step", "evolution", "spectra", "calibration"] {
        let svg = dir.path().join(format!("{kind}.svg"));
        let o = probspec(&["plot", "--run", s(&run), "--kind", kind, "--out", s(&svg)]);
        assert!(o.status.success(), "{kind}");
        assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    }
    let metrics = run.join("metrics.csv");
    let header = std::fs::read_to_string(&metrics).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&metrics, header + "\n").unwrap();
    let o = probspec(&["plot", "--run", s(&run), "--kind", "evolution", "--out", s(&dir.path().join("e.svg"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn truth_spectra_feed_back_into_runs() {
    let dir = tempfile::tempdir().unwrap();
    // truth spectra of a diffusing Gaussian span ~1e-97 in power, beyond what
    // the gradient tolerance can resolve, so those steps are flagged
    let cfg = write_config(dir.path(), "small.cfg", &format!("{SMALL}\nrun.policy = \"continue\""));
    let reference = dir.path().join("ref");
    assert!(probspec(&["reference", "--config", s(&cfg), "--out", s(&reference)]).status.success());

    let empty = dir.path().join("empty.csv");
    let o = probspec(&["spectrum-from-truth", "--reference", s(&reference), "--steps", "3..2", "--out", s(&empty)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&empty).unwrap().is_empty());
    assert!(SpectrumTable::read(&empty).unwrap().steps.is_empty());

    let spectra = dir.path().join("spectra.csv");
    assert_eq!(commands::spectrum_from_truth(&reference, "1..2", &spectra).unwrap(), 2);
    let table = SpectrumTable::read(&spectra).unwrap();
    assert_eq!(table.steps, vec![1, 2]);
    assert_eq!(table.to_csv(), std::fs::read_to_string(&spectra).unwrap());

    let out = dir.path().join("run");
    let o = probspec(&["run", "--config", s(&cfg), "--out", s(&out), "--spectrum-file", s(&spectra)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(out.join("manifest.json")).unwrap().contains("spectrum_file"));
    let summary = commands::compare(&out, "analytic", &dir.path().join("cmp.csv")).unwrap();
    assert!(summary.steps.iter().all(|c| c.rel_l2_error < 1e-2), "{summary:?}");
}

#[test]
fn step_ranges_are_inclusive() {
    assert_eq!(parse_steps("1..3").unwrap(), 1..=3);
    assert_eq!(parse_steps("1..=3").unwrap(), 1..=3);
    assert_eq!(parse_steps("4").unwrap(), 4..=4);
    assert!(parse_steps("3..2").unwrap().is_empty());
    assert!(parse_steps("a..b").is_err());
}
