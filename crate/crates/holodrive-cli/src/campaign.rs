//! Executes configured scenarios and writes the three artifact kinds:
//! report.json (machine-readable, byte-stable for a given config + seed +
//! version), report.txt (human summary, includes wall time), and CSV tables.

use holodrive::gate::{run_gate, GateReport};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::Path;

use crate::config::{NormalizedConfig, ScenarioConfig, SweepAxis};
use crate::{csv_number, csv_text, CliError, CliResult};

pub const SWEEP_CSV_COLUMNS: &str =
    "fidelity,berry_phase,dark_leakage,trace_retained,total_time_us,status";

/// Runs the gate a normalized config describes.
pub fn execute_run(cfg: &NormalizedConfig) -> CliResult<GateReport> {
    let plan = cfg.plan()?;
    run_gate(
        plan.kind,
        &plan.schedule,
        plan.layer,
        plan.drive.as_ref(),
        plan.noise.as_ref(),
        &plan.psi,
        &plan.opts,
    )
    .map_err(|e| CliError::Physics(e.to_string()))
}

/// One sweep point. Failures stay in the row instead of aborting the
/// campaign; `total_time_us` is known whenever the row's config normalized.
#[derive(Debug)]
pub struct SweepRow {
    pub value: f64,
    pub total_time_us: Option<f64>,
    pub outcome: CliResult<GateReport>,
}

fn sweep_point(base: &ScenarioConfig, axis: SweepAxis, value: f64) -> SweepRow {
    let mut cfg = base.clone();
    if let Err(e) = axis.apply(&mut cfg, value) {
        return SweepRow {
            value,
            total_time_us: None,
            outcome: Err(e),
        };
    }
    match cfg.normalize() {
        Err(e) => SweepRow {
            value,
            total_time_us: None,
            outcome: Err(e),
        },
        Ok(norm) => SweepRow {
            value,
            total_time_us: Some(norm.schedule.total_time_us),
            outcome: execute_run(&norm),
        },
    }
}

/// Runs one scenario per axis value, in the given order. `jobs` bounds the
/// worker threads; row order in the result is the input order either way.
pub fn execute_sweep(
    base: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    jobs: Option<usize>,
) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Config(
            "sweep needs at least one value".to_string(),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("sweep value {v} is not finite")));
    }
    let run_all = || -> Vec<SweepRow> {
        values
            .par_iter()
            .map(|&v| sweep_point(base, axis, v))
            .collect()
    };
    match jobs {
        None => Ok(run_all()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            Ok(pool.install(run_all))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Machine-readable report. Excludes wall-clock times so identical
/// (config, seed, version) runs produce identical bytes.
#[derive(Serialize)]
struct ReportJson<'a> {
    version: &'static str,
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<&'a str>,
    config: &'a NormalizedConfig,
    scenarios: Vec<ScenarioJson>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct ScenarioJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    axis_value: Option<f64>,
    status: String,
    kind: Option<String>,
    layer: Option<String>,
    fidelity: Option<f64>,
    berry_phase: Option<f64>,
    dark_leakage: Option<f64>,
    trace_retained: Option<f64>,
    hermiticity_correction: Option<f64>,
    initial_state: Option<String>,
    schedule: Option<String>,
    total_time_us: Option<f64>,
    parameters: Option<Vec<(String, String)>>,
    final_logical: Option<Vec<Vec<[f64; 2]>>>,
}

fn scenario_json(axis_value: Option<f64>, row: Result<&GateReport, &CliError>) -> ScenarioJson {
    match row {
        Err(e) => ScenarioJson {
            axis_value,
            status: format!("{}_error: {}", e.category(), e.message()),
            kind: None,
            layer: None,
            fidelity: None,
            berry_phase: None,
            dark_leakage: None,
            trace_retained: None,
            hermiticity_correction: None,
            initial_state: None,
            schedule: None,
            total_time_us: None,
            parameters: None,
            final_logical: None,
        },
        Ok(r) => ScenarioJson {
            axis_value,
            status: "ok".to_string(),
            kind: Some(r.kind.to_string()),
            layer: Some(r.layer.to_string()),
            fidelity: Some(r.fidelity),
            berry_phase: Some(r.berry_phase),
            dark_leakage: Some(r.dark_leakage),
            trace_retained: Some(r.trace_retained),
            hermiticity_correction: Some(r.hermiticity_correction),
            initial_state: Some(r.initial_label.clone()),
            schedule: Some(r.schedule_id.clone()),
            total_time_us: None,
            parameters: Some(r.parameters.clone()),
            final_logical: Some(
                r.final_logical
                    .rows()
                    .into_iter()
                    .map(|row| row.iter().map(|c| [c.re, c.im]).collect())
                    .collect(),
            ),
        },
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn trajectory_csv(report: &GateReport) -> String {
    let mut out = String::from("t_us,dark_leakage,trace_error,min_eigenvalue\n");
    for s in &report.samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_number(s.t),
            csv_number(s.dark_leakage),
            csv_number(s.trace_error),
            csv_number(s.min_eigenvalue)
        ));
    }
    out
}

fn parameters_block(report: &GateReport) -> String {
    let mut out = String::new();
    for (k, v) in &report.parameters {
        out.push_str(&format!("  {k} = {v}\n"));
    }
    out
}

fn run_txt(cfg: &NormalizedConfig, sha: &str, seed: u64, report: &GateReport) -> String {
    format!(
        "holodrive run report\n\
         version: {}\n\
         config sha256: {sha}\n\
         seed: {seed}\n\
         \n\
         gate: {} on layer {}\n\
         initial state: {}\n\
         schedule: {}\n\
         total time: {} us over legs {:?}\n\
         \n\
         fidelity:               {:.12}\n\
         berry phase:            {:.12} rad\n\
         dark-frame leakage:     {:.6e}\n\
         trace retained:         {:.12}\n\
         hermiticity correction: {:.3e}\n\
         wall time:              {:.3} s\n\
         \n\
         parameters:\n{}\
         \n\
         files:\n  report.json\n  report.txt\n  trajectory.csv\n",
        env!("CARGO_PKG_VERSION"),
        report.kind,
        report.layer,
        report.initial_label,
        report.schedule_id,
        cfg.schedule.total_time_us,
        cfg.schedule.segment_durations_us,
        report.fidelity,
        report.berry_phase,
        report.dark_leakage,
        report.trace_retained,
        report.hermiticity_correction,
        report.wall_time,
        parameters_block(report)
    )
}

/// Writes report.json, report.txt, and trajectory.csv; returns the manifest.
pub fn write_run_outputs(
    out_dir: &Path,
    cfg: &NormalizedConfig,
    sha: &str,
    seed: u64,
    report: &GateReport,
) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let files = vec![
        "report.json".to_string(),
        "report.txt".to_string(),
        "trajectory.csv".to_string(),
    ];
    let json = ReportJson {
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        config_sha256: sha,
        seed,
        axis: None,
        config: cfg,
        scenarios: vec![scenario_json(None, Ok(report))],
        files: files.clone(),
    };
    let body = serde_json::to_string_pretty(&json)
        .map_err(|e| CliError::Io(format!("cannot encode report.json: {e}")))?;
    write_file(out_dir, "report.json", &format!("{body}\n"))?;
    write_file(out_dir, "report.txt", &run_txt(cfg, sha, seed, report))?;
    write_file(out_dir, "trajectory.csv", &trajectory_csv(report))?;
    Ok(files)
}

fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{axis},{SWEEP_CSV_COLUMNS}\n");
    for row in rows {
        let time_cell = row.total_time_us.map(csv_number).unwrap_or_default();
        match &row.outcome {
            Ok(r) => out.push_str(&format!(
                "{},{},{},{},{},{},ok\n",
                csv_number(row.value),
                csv_number(r.fidelity),
                csv_number(r.berry_phase),
                csv_number(r.dark_leakage),
                csv_number(r.trace_retained),
                time_cell
            )),
            Err(e) => out.push_str(&format!(
                "{},,,,,{},{}\n",
                csv_number(row.value),
                time_cell,
                csv_text(&format!("{}_error: {}", e.category(), e.message()))
            )),
        }
    }
    out
}

fn sweep_txt(cfg: &NormalizedConfig, sha: &str, seed: u64, axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "holodrive sweep report\n\
         version: {}\n\
         config sha256: {sha}\n\
         seed: {seed}\n\
         gate: {} on layer {}\n\
         axis: {axis} ({} points)\n\n",
        env!("CARGO_PKG_VERSION"),
        cfg.gate.kind,
        cfg.gate.layer,
        rows.len()
    );
    for row in rows {
        match &row.outcome {
            Ok(r) => out.push_str(&format!(
                "  {axis} = {:<22} fidelity = {:.9}  berry phase = {:+.9}  wall = {:.3} s\n",
                row.value, r.fidelity, r.berry_phase, r.wall_time
            )),
            Err(e) => out.push_str(&format!(
                "  {axis} = {:<22} {}_error: {}\n",
                row.value,
                e.category(),
                e.message()
            )),
        }
    }
    out.push_str("\nfiles:\n  report.json\n  report.txt\n  sweep.csv\n");
    out
}

/// Writes report.json, report.txt, and sweep.csv; returns the manifest.
pub fn write_sweep_outputs(
    out_dir: &Path,
    cfg: &NormalizedConfig,
    sha: &str,
    seed: u64,
    axis: SweepAxis,
    rows: &[SweepRow],
) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let files = vec![
        "report.json".to_string(),
        "report.txt".to_string(),
        "sweep.csv".to_string(),
    ];
    let scenarios = rows
        .iter()
        .map(|row| {
            let mut s = scenario_json(Some(row.value), row.outcome.as_ref());
            s.total_time_us = row.total_time_us;
            s
        })
        .collect();
    let json = ReportJson {
        version: env!("CARGO_PKG_VERSION"),
        command: "sweep",
        config_sha256: sha,
        seed,
        axis: Some(axis.as_str()),
        config: cfg,
        scenarios,
        files: files.clone(),
    };
    let body = serde_json::to_string_pretty(&json)
        .map_err(|e| CliError::Io(format!("cannot encode report.json: {e}")))?;
    write_file(out_dir, "report.json", &format!("{body}\n"))?;
    write_file(out_dir, "report.txt", &sweep_txt(cfg, sha, seed, axis, rows))?;
    write_file(out_dir, "sweep.csv", &sweep_csv(axis, rows))?;
    Ok(files)
}
