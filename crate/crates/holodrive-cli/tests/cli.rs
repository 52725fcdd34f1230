//! End-to-end checks of the scenario runner: bundled reference configs hit
//! their fidelity bands, sweeps write ordered CSV rows with per-row failure
//! capture, reports are byte-stable, and the binary maps error categories
//! to exit codes.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use holodrive::scenario::reference_scenario;
use holodrive::schedule::GateKind;
use holodrive_cli::campaign::{
    execute_run, execute_sweep, sha256_hex, write_run_outputs, write_sweep_outputs,
};
use holodrive_cli::config::{parse_config, ScenarioConfig, SweepAxis};
use holodrive_cli::CliError;

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load_raw(path: &Path) -> ScenarioConfig {
    parse_config(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK_CLOSED: &str = r#"
[gate]
kind = "phase"
phi_c = 1.5707963267948966

[schedule]
total_time_us = 0.3
lambda_prime_mhz = 3.4375
"#;

#[test]
fn bundled_reference_configs_land_in_their_fidelity_bands() {
    for (file, kind) in [
        ("fig2_phase.toml", GateKind::Phase),
        ("fig2_bitphase.toml", GateKind::BitPhase),
        ("fig2_cp.toml", GateKind::ControlledPhase),
    ] {
        let spec = reference_scenario(kind);
        let norm = load_raw(&repo_config(file)).normalize().unwrap();
        let report = execute_run(&norm).unwrap();
        assert_eq!(report.kind, kind);
        let miss = (report.fidelity - spec.target_fidelity).abs();
        assert!(
            miss <= spec.fidelity_band,
            "{file}: fidelity {:.6} misses target {:.6} by {miss:.2e} (band {:.1e})",
            report.fidelity,
            spec.target_fidelity,
            spec.fidelity_band
        );
    }
}

#[test]
fn phi_c_sweep_writes_one_ordered_row_per_value() {
    let raw = parse_config(QUICK_CLOSED).unwrap();
    let values = [PI / 4.0, PI / 2.0, PI];
    let rows = execute_sweep(&raw, SweepAxis::PhiC, &values, Some(2)).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, v) in rows.iter().zip(values) {
        assert_eq!(row.value, v);
        let report = row.outcome.as_ref().unwrap();
        assert!(report.fidelity > 0.999999, "phi_c = {v}: {}", report.fidelity);
        let wrapped = (report.berry_phase + v).rem_euclid(2.0 * PI);
        let dist = wrapped.min(2.0 * PI - wrapped);
        assert!(dist < 1e-4, "phi_c = {v}: berry phase {}", report.berry_phase);
    }

    let dir = tempfile::tempdir().unwrap();
    let norm = raw.normalize().unwrap();
    write_sweep_outputs(dir.path(), &norm, "t", 0, SweepAxis::PhiC, &rows).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "phi_c,fidelity,berry_phase,dark_leakage,trace_retained,total_time_us,status"
    );
    assert_eq!(lines.len(), 4);
    for (line, v) in lines[1..].iter().zip(values) {
        let first = line.split(',').next().unwrap();
        assert_eq!(first.parse::<f64>().unwrap(), v);
        assert!(line.ends_with(",ok"), "row: {line}");
    }
}

#[test]
fn total_time_sweep_on_the_closed_layer_is_flat() {
    let raw = parse_config(QUICK_CLOSED).unwrap();
    let values: Vec<f64> = (0..10)
        .map(|i| 0.05 * (20.0f64).powf(i as f64 / 9.0))
        .collect();
    let rows = execute_sweep(&raw, SweepAxis::TotalTime, &values, None).unwrap();
    let fs: Vec<f64> = rows
        .iter()
        .map(|r| r.outcome.as_ref().unwrap().fidelity)
        .collect();
    let spread = fs.iter().cloned().fold(f64::MIN, f64::max)
        - fs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 1e-4, "fidelity spread {spread:.2e} across {fs:?}");
}

#[test]
fn kappa_sweep_on_the_full_cavity_layer_is_strictly_decreasing() {
    let raw = load_raw(&repo_config("fig2_phase.toml"));
    let values = [0.0, 0.0748, 0.748];
    let rows = execute_sweep(&raw, SweepAxis::Kappa, &values, None).unwrap();
    let fs: Vec<f64> = rows
        .iter()
        .map(|r| r.outcome.as_ref().unwrap().fidelity)
        .collect();
    assert!(
        fs[0] > fs[1] && fs[1] > fs[2],
        "fidelity not strictly decreasing with kappa: {fs:?}"
    );
}

#[test]
fn sweep_rejects_empty_value_lists_and_unknown_axes() {
    let raw = parse_config(QUICK_CLOSED).unwrap();
    let e = execute_sweep(&raw, SweepAxis::PhiC, &[], None).unwrap_err();
    assert!(matches!(e, CliError::Config(_)));
    assert!(e.message().contains("at least one value"));

    let e = SweepAxis::parse("coupling_strength").unwrap_err();
    assert!(e.message().contains("unknown sweep axis `coupling_strength`"));
    assert!(e.message().contains("phi_c"));
}

#[test]
fn failed_sweep_rows_are_recorded_without_aborting() {
    let raw = parse_config(QUICK_CLOSED).unwrap();
    let values = [PI / 2.0, 7.0, PI / 4.0];
    let rows = execute_sweep(&raw, SweepAxis::PhiC, &values, None).unwrap();
    assert!(rows[0].outcome.is_ok());
    assert!(rows[1].outcome.is_err());
    assert!(rows[2].outcome.is_ok());

    let dir = tempfile::tempdir().unwrap();
    let norm = raw.normalize().unwrap();
    write_sweep_outputs(dir.path(), &norm, "t", 0, SweepAxis::PhiC, &rows).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("7,"));
    assert!(lines[2].contains("error"), "row: {}", lines[2]);
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[3].ends_with(",ok"));

    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"axis\": \"phi_c\""));
    assert!(json.contains("_error"));
}

#[test]
fn machine_readable_outputs_are_byte_identical_across_reruns() {
    let raw = parse_config(QUICK_CLOSED).unwrap();
    let norm = raw.normalize().unwrap();
    let sha = sha256_hex(QUICK_CLOSED.as_bytes());

    let mut json = Vec::new();
    let mut traj = Vec::new();
    for _ in 0..2 {
        let report = execute_run(&norm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_outputs(dir.path(), &norm, &sha, 7, &report).unwrap();
        json.push(std::fs::read(dir.path().join("report.json")).unwrap());
        traj.push(std::fs::read(dir.path().join("trajectory.csv")).unwrap());
    }
    assert_eq!(json[0], json[1]);
    assert_eq!(traj[0], traj[1]);

    let mut sweeps = Vec::new();
    for _ in 0..2 {
        let rows = execute_sweep(&raw, SweepAxis::PhiC, &[PI / 4.0, PI / 2.0], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sweep_outputs(dir.path(), &norm, &sha, 7, SweepAxis::PhiC, &rows).unwrap();
        sweeps.push((
            std::fs::read(dir.path().join("report.json")).unwrap(),
            std::fs::read(dir.path().join("sweep.csv")).unwrap(),
        ));
    }
    assert_eq!(sweeps[0], sweeps[1]);
}

#[test]
fn trajectory_csv_uses_exponent_notation_for_small_magnitudes() {
    let norm = parse_config(QUICK_CLOSED).unwrap().normalize().unwrap();
    let report = execute_run(&norm).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &norm, "t", 0, &report).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t_us,dark_leakage,trace_error,min_eigenvalue");
    assert!(lines[1].starts_with("0,"), "t = 0 prints as 0: {}", lines[1]);
    assert!(
        csv.contains("e-"),
        "small diagnostics should use exponent notation:\n{csv}"
    );
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 4);
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_holodrive"))
}

#[test]
fn binary_validate_prints_defaults_and_succeeds() {
    let out = bin()
        .args(["validate", "--config"])
        .arg(repo_config("fig2_phase.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("config ok"));
    assert!(stdout.contains("lambda_prime_mhz = 3.4375"));
    assert!(stdout.contains("ramp = \"cosine\""));
    assert!(stdout.contains("samples_per_segment = 4"));
}

#[test]
fn binary_maps_error_categories_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = bin()
        .args(["run", "--config", "/nonexistent/scenario.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[io]"));

    let broken = dir.path().join("no_phi.toml");
    std::fs::write(&broken, "[gate]\nkind = \"phase\"\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(stderr.contains("error[config]"), "stderr: {stderr}");
    assert!(stderr.contains("phi_c"), "stderr: {stderr}");

    let out = bin()
        .args(["sweep", "--axis", "viscosity", "--values", "1,2", "--config"])
        .arg(repo_config("fig2_phase.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep axis"));

    // A bit-phase loop at a generic angle needs three spokes per leg, which
    // the laser plan rejects: a physics guard, not a config problem.
    let infeasible = dir.path().join("generic_angle.toml");
    let text = std::fs::read_to_string(repo_config("fig2_bitphase.toml"))
        .unwrap()
        .replace("phi_c = 1.5707963267948966", "phi_c = 0.8");
    std::fs::write(&infeasible, text).unwrap();
    let out = bin()
        .args(["run", "--out"])
        .arg(dir.path().join("x"))
        .args(["--config"])
        .arg(&infeasible)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[physics]"));
}

#[test]
fn binary_run_writes_artifacts_and_honors_out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quick.toml");
    std::fs::write(&cfg, QUICK_CLOSED).unwrap();

    let explicit = dir.path().join("explicit");
    let out = bin()
        .args(["run", "--seed", "3", "--out"])
        .arg(&explicit)
        .arg("--config")
        .arg(&cfg)
        .env("HOLODRIVE_OUT_DIR", dir.path().join("ignored"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "report.txt", "trajectory.csv"] {
        assert!(explicit.join(name).is_file(), "missing {name}");
    }
    assert!(!dir.path().join("ignored").exists());
    let json = std::fs::read_to_string(explicit.join("report.json")).unwrap();
    assert!(json.contains("\"seed\": 3"));
    assert!(json.contains("\"command\": \"run\""));

    let from_env = dir.path().join("from_env");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .env("HOLODRIVE_OUT_DIR", &from_env)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(from_env.join("report.json").is_file());
}
