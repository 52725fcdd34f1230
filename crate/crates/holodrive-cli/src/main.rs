//! `holodrive`: run, sweep, and validate holonomic-gate scenarios described
//! by TOML configs. Exit codes: 0 success, 2 config error, 3 physics error,
//! 4 I/O error.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use holodrive_cli::campaign::{
    execute_run, execute_sweep, sha256_hex, write_run_outputs, write_sweep_outputs,
};
use holodrive_cli::config::{parse_config, NormalizedConfig, ScenarioConfig, SweepAxis};
use holodrive_cli::{CliError, CliResult};

/// Environment variable consulted for the default output root.
const OUT_DIR_ENV: &str = "HOLODRIVE_OUT_DIR";
const OUT_DIR_FALLBACK: &str = "holodrive_out";

#[derive(Parser, Debug)]
#[command(author, version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's out_dir and $HOLODRIVE_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed recorded in reports (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points (default: one per CPU).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured scenario and write reports.
    Run(Common),
    /// Rerun the scenario once per value of one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary (phi_c, total_time, kappa, ...).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, in output row order.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Parse the config and print its fully defaulted form.
    Validate(Common),
}

struct LoadedConfig {
    raw: ScenarioConfig,
    normalized: NormalizedConfig,
    sha256: String,
    seed: u64,
    out_dir: PathBuf,
}

fn load(common: &Common) -> CliResult<LoadedConfig> {
    let bytes = std::fs::read(&common.config).map_err(|e| {
        CliError::Io(format!("cannot read {}: {e}", common.config.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
    let raw = parse_config(&text)?;
    let normalized = raw.normalize()?;
    let seed = common.seed.unwrap_or(normalized.run.seed);
    let out_dir = common
        .out
        .clone()
        .or_else(|| normalized.run.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(OUT_DIR_FALLBACK));
    Ok(LoadedConfig {
        raw,
        normalized,
        sha256: sha256_hex(&bytes),
        seed,
        out_dir,
    })
}

fn cmd_run(common: &Common) -> CliResult<()> {
    let loaded = load(common)?;
    let report = execute_run(&loaded.normalized)?;
    let files = write_run_outputs(
        &loaded.out_dir,
        &loaded.normalized,
        &loaded.sha256,
        loaded.seed,
        &report,
    )?;
    println!(
        "{} gate on {}: fidelity {:.9}, berry phase {:+.9} rad, wall {:.3} s",
        report.kind, report.layer, report.fidelity, report.berry_phase, report.wall_time
    );
    for f in files {
        println!("wrote {}", loaded.out_dir.join(f).display());
    }
    Ok(())
}

fn cmd_sweep(common: &Common, axis: &str, values: &[f64]) -> CliResult<()> {
    let axis = SweepAxis::parse(axis)?;
    let loaded = load(common)?;
    let rows = execute_sweep(&loaded.raw, axis, values, common.jobs)?;
    let files = write_sweep_outputs(
        &loaded.out_dir,
        &loaded.normalized,
        &loaded.sha256,
        loaded.seed,
        axis,
        &rows,
    )?;
    for row in &rows {
        match &row.outcome {
            Ok(r) => println!("{axis} = {}: fidelity {:.9}", row.value, r.fidelity),
            Err(e) => println!("{axis} = {}: {e}", row.value),
        }
    }
    for f in files {
        println!("wrote {}", loaded.out_dir.join(f).display());
    }
    Ok(())
}

fn cmd_validate(common: &Common) -> CliResult<()> {
    let loaded = load(common)?;
    loaded.normalized.plan()?;
    let text = toml::to_string_pretty(&loaded.normalized)
        .map_err(|e| CliError::Io(format!("cannot render normalized config: {e}")))?;
    print!("{text}");
    println!("# config ok: sha256 {}", loaded.sha256);
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep {
            common,
            axis,
            values,
        } => cmd_sweep(common, axis, values),
        Command::Validate(c) => cmd_validate(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
