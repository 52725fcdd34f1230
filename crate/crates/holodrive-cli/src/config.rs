//! Scenario config schema: TOML in, a fully defaulted `NormalizedConfig`
//! out, and from there a `RunPlan` of library types. Frequencies in the file
//! are ordinary MHz (converted to angular rad/us internally), durations are
//! microseconds, angles are radians.

use holodrive::dynamics::StepControl;
use holodrive::gate::{logical_layout, logical_ket, DriveParams, Layer, NoiseRates, RunOptions};
use holodrive::hilbert::{Ket, C64};
use holodrive::scenario::{initial_state, state_amplitudes};
use holodrive::schedule::{make_schedule, GateKind, PulseSchedule, Ramp};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::{CliError, CliResult};

/// Relative tolerance for redundant values the config states twice
/// (explicit lambda' vs the drive-implied one, total time vs leg sum).
pub const REDUNDANCY_RTOL: f64 = 1e-9;

/// Norm slack accepted on user-supplied amplitudes before exact
/// renormalization.
pub const AMPLITUDE_NORM_TOL: f64 = 1e-8;

fn rad_per_us(mhz: f64) -> f64 {
    TAU * mhz
}

/// Raw config as written on disk. Optional fields get defaults during
/// normalization; unknown fields are rejected by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub gate: GateSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub state: StateSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    /// bitphase | phase | cp
    pub kind: String,
    /// dfs_abstract | effective | full_cavity
    #[serde(default = "default_layer")]
    pub layer: String,
    /// Controlled rotation angle in radians.
    pub phi_c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// Loop duration in microseconds, split into equal legs unless
    /// `segment_durations_us` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_time_us: Option<f64>,
    /// Explicit per-leg durations in microseconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_durations_us: Option<Vec<f64>>,
    /// cosine | linear
    pub ramp: String,
    /// Drive amplitude in MHz; defaults to the value implied by [drive].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_prime_mhz: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            total_time_us: None,
            segment_durations_us: None,
            ramp: default_ramp(),
            lambda_prime_mhz: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    /// Center-cavity coupling in MHz.
    pub g_mhz: f64,
    /// Hub-laser detuning from its center's transition, MHz.
    pub delta_hub_mhz: f64,
    /// Spoke-laser detuning, MHz.
    pub delta_spoke_mhz: f64,
    /// Photon states kept per cavity mode (the exact excitation-sector
    /// restriction makes anything at or above the code weight equivalent).
    #[serde(default = "default_fock_cutoff")]
    pub fock_cutoff: usize,
    /// Model dispersive level shifts instead of assuming they are
    /// compensated by the laser tuning.
    #[serde(default)]
    pub include_stark: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Cavity linewidth in MHz (felt only on the full_cavity layer).
    pub kappa_mhz: f64,
    /// Collective center relaxation rate in MHz.
    pub gamma_mhz: f64,
    /// Collective center dephasing rate in MHz.
    pub gamma_phi_mhz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct StateSection {
    /// Initial logical amplitudes as [re, im] pairs; defaults to the
    /// reference input for the gate kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Add the transitionless correction to the drive.
    pub counterdiabatic: bool,
    /// Diagnostic samples recorded per schedule leg.
    pub samples_per_segment: usize,
    /// Steps of the dark-frame loop integral fixing the target holonomy.
    pub wilson_steps: usize,
    /// Relative step-error tolerance of the propagator.
    pub rtol: f64,
    /// Absolute step-error tolerance of the propagator.
    pub atol: f64,
    /// Output directory; overridden by --out, falls back to
    /// $HOLODRIVE_OUT_DIR, then ./holodrive_out.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Recorded in every report; reserved for stochastic extensions.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let opts = RunOptions::default();
        Self {
            counterdiabatic: opts.counterdiabatic,
            samples_per_segment: opts.samples_per_segment,
            wilson_steps: opts.wilson_steps,
            rtol: opts.step.rtol,
            atol: opts.step.atol,
            out_dir: None,
            seed: 0,
        }
    }
}

fn default_layer() -> String {
    "dfs_abstract".to_string()
}

fn default_ramp() -> String {
    "cosine".to_string()
}

fn default_fock_cutoff() -> usize {
    2
}

/// Config with every default filled in, as recorded in reports. Serializes
/// cleanly to TOML (for `validate`) and JSON (inside report.json).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedConfig {
    pub gate: GateSection,
    pub schedule: NormalizedSchedule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    pub state: NormalizedState,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedSchedule {
    pub total_time_us: f64,
    pub segment_durations_us: Vec<f64>,
    pub ramp: String,
    pub lambda_prime_mhz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedState {
    pub amplitudes: Vec<[f64; 2]>,
}

/// Library-typed inputs for one `run_gate` call.
pub struct RunPlan {
    pub kind: GateKind,
    pub layer: Layer,
    pub schedule: PulseSchedule,
    pub drive: Option<DriveParams>,
    pub noise: Option<NoiseRates>,
    pub psi: Ket,
    pub opts: RunOptions,
}

/// Parses TOML text; schema violations name the offending field.
pub fn parse_config(text: &str) -> CliResult<ScenarioConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}

fn drive_implied_lambda_mhz(d: &DriveSection) -> CliResult<f64> {
    if d.delta_hub_mhz == 0.0 || d.delta_spoke_mhz == 0.0 {
        return Err(config_err(
            "delta_hub_mhz and delta_spoke_mhz must be nonzero".to_string(),
        ));
    }
    Ok(0.5 * d.g_mhz * d.g_mhz * (1.0 / d.delta_hub_mhz + 1.0 / d.delta_spoke_mhz))
}

impl ScenarioConfig {
    /// Fills defaults and cross-checks redundant fields. Pure validation;
    /// nothing here depends on the layer actually being run.
    pub fn normalize(&self) -> CliResult<NormalizedConfig> {
        let kind = GateKind::parse(&self.gate.kind).map_err(|e| config_err(e.to_string()))?;
        Layer::parse(&self.gate.layer).map_err(|e| config_err(e.to_string()))?;
        Ramp::parse(&self.schedule.ramp).map_err(|e| config_err(e.to_string()))?;
        if !self.gate.phi_c.is_finite() {
            return Err(config_err(format!(
                "phi_c = {} is not finite",
                self.gate.phi_c
            )));
        }

        let n = kind.segment_count();
        let durations = match (
            self.schedule.total_time_us,
            self.schedule.segment_durations_us.as_ref(),
        ) {
            (None, None) => {
                return Err(config_err(
                    "[schedule] needs total_time_us or segment_durations_us".to_string(),
                ))
            }
            (Some(t), None) => {
                if !(t > 0.0) || !t.is_finite() {
                    return Err(config_err(format!("total_time_us = {t} must be > 0")));
                }
                vec![t / n as f64; n]
            }
            (total, Some(list)) => {
                if list.len() != n {
                    return Err(config_err(format!(
                        "segment_durations_us needs {n} entries for a {kind} gate, got {}",
                        list.len()
                    )));
                }
                let sum: f64 = list.iter().sum();
                if let Some(t) = total {
                    if (t - sum).abs() > REDUNDANCY_RTOL * sum.abs().max(1.0) {
                        return Err(config_err(format!(
                            "total_time_us = {t} disagrees with the segment_durations_us sum {sum}"
                        )));
                    }
                }
                list.clone()
            }
        };
        let total_time_us: f64 = durations.iter().sum();

        let implied = self
            .drive
            .as_ref()
            .map(drive_implied_lambda_mhz)
            .transpose()?;
        let lambda_prime_mhz = match (self.schedule.lambda_prime_mhz, implied) {
            (None, None) => {
                return Err(config_err(
                    "lambda_prime_mhz is required when no [drive] section implies it".to_string(),
                ))
            }
            (Some(l), None) => l,
            (None, Some(l)) => l,
            (Some(l), Some(implied)) => {
                if (l - implied).abs() > REDUNDANCY_RTOL * implied.abs().max(1.0) {
                    return Err(config_err(format!(
                        "lambda_prime_mhz = {l} disagrees with the [drive]-implied value {implied}"
                    )));
                }
                l
            }
        };
        if !(lambda_prime_mhz > 0.0) || !lambda_prime_mhz.is_finite() {
            return Err(config_err(format!(
                "lambda_prime_mhz = {lambda_prime_mhz} must be > 0"
            )));
        }

        let dim = logical_layout(kind).dim();
        let amplitudes = match &self.state.amplitudes {
            None => state_amplitudes(&initial_state(kind))
                .iter()
                .map(|c| [c.re, c.im])
                .collect(),
            Some(a) => {
                if a.len() != dim {
                    return Err(config_err(format!(
                        "state.amplitudes needs {dim} entries for a {kind} gate, got {}",
                        a.len()
                    )));
                }
                let norm: f64 = a.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>().sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > AMPLITUDE_NORM_TOL {
                    return Err(config_err(format!(
                        "state.amplitudes has norm {norm}, expected 1"
                    )));
                }
                a.iter().map(|p| [p[0] / norm, p[1] / norm]).collect()
            }
        };

        let run = self.run.clone();
        if !(run.rtol > 0.0) || !run.rtol.is_finite() {
            return Err(config_err(format!("rtol = {} must be > 0", run.rtol)));
        }
        if !(run.atol > 0.0) || !run.atol.is_finite() {
            return Err(config_err(format!("atol = {} must be > 0", run.atol)));
        }
        if run.samples_per_segment == 0 {
            return Err(config_err("samples_per_segment must be >= 1".to_string()));
        }
        if run.wilson_steps == 0 {
            return Err(config_err("wilson_steps must be >= 1".to_string()));
        }

        Ok(NormalizedConfig {
            gate: self.gate.clone(),
            schedule: NormalizedSchedule {
                total_time_us,
                segment_durations_us: durations,
                ramp: self.schedule.ramp.clone(),
                lambda_prime_mhz,
            },
            drive: self.drive.clone(),
            noise: self.noise.clone(),
            state: NormalizedState { amplitudes },
            run,
        })
    }
}

impl NormalizedConfig {
    /// Converts to library types (units become rad/us here).
    pub fn plan(&self) -> CliResult<RunPlan> {
        let kind = GateKind::parse(&self.gate.kind).map_err(|e| config_err(e.to_string()))?;
        let layer = Layer::parse(&self.gate.layer).map_err(|e| config_err(e.to_string()))?;
        let ramp = Ramp::parse(&self.schedule.ramp).map_err(|e| config_err(e.to_string()))?;
        let schedule = make_schedule(
            kind,
            self.gate.phi_c,
            &self.schedule.segment_durations_us,
            ramp,
            rad_per_us(self.schedule.lambda_prime_mhz),
        )
        .map_err(|e| config_err(e.to_string()))?;
        let drive = self
            .drive
            .as_ref()
            .map(|d| {
                DriveParams::new(
                    rad_per_us(d.g_mhz),
                    rad_per_us(d.delta_hub_mhz),
                    rad_per_us(d.delta_spoke_mhz),
                    d.fock_cutoff,
                    d.include_stark,
                )
            })
            .transpose()
            .map_err(|e| config_err(e.to_string()))?;
        let noise = self
            .noise
            .as_ref()
            .map(|nz| {
                NoiseRates::new(
                    rad_per_us(nz.kappa_mhz),
                    rad_per_us(nz.gamma_mhz),
                    rad_per_us(nz.gamma_phi_mhz),
                )
            })
            .transpose()
            .map_err(|e| config_err(e.to_string()))?;
        let amps: Vec<C64> = self
            .state
            .amplitudes
            .iter()
            .map(|p| C64::new(p[0], p[1]))
            .collect();
        let psi = logical_ket(kind, &amps).map_err(|e| config_err(e.to_string()))?;
        let opts = RunOptions {
            counterdiabatic: self.run.counterdiabatic,
            samples_per_segment: self.run.samples_per_segment,
            wilson_steps: self.run.wilson_steps,
            step: StepControl {
                rtol: self.run.rtol,
                atol: self.run.atol,
                ..StepControl::default()
            },
        };
        Ok(RunPlan {
            kind,
            layer,
            schedule,
            drive,
            noise,
            psi,
            opts,
        })
    }
}

/// Parameter axes `sweep` can vary. Values are in config units: radians,
/// microseconds, MHz, or a photon count for the Fock cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PhiC,
    TotalTime,
    LambdaPrime,
    Kappa,
    Gamma,
    GammaPhi,
    G,
    DeltaHub,
    DeltaSpoke,
    FockCutoff,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 10] = [
        SweepAxis::PhiC,
        SweepAxis::TotalTime,
        SweepAxis::LambdaPrime,
        SweepAxis::Kappa,
        SweepAxis::Gamma,
        SweepAxis::GammaPhi,
        SweepAxis::G,
        SweepAxis::DeltaHub,
        SweepAxis::DeltaSpoke,
        SweepAxis::FockCutoff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PhiC => "phi_c",
            SweepAxis::TotalTime => "total_time",
            SweepAxis::LambdaPrime => "lambda_prime",
            SweepAxis::Kappa => "kappa",
            SweepAxis::Gamma => "gamma",
            SweepAxis::GammaPhi => "gamma_phi",
            SweepAxis::G => "g",
            SweepAxis::DeltaHub => "delta_hub",
            SweepAxis::DeltaSpoke => "delta_spoke",
            SweepAxis::FockCutoff => "fock_cutoff",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|a| a.as_str()).collect();
                config_err(format!(
                    "unknown sweep axis `{s}` (expected one of: {})",
                    names.join(", ")
                ))
            })
    }

    /// Rewrites one field of the raw config; the row is then re-normalized,
    /// so derived values (total time, implied lambda') stay consistent.
    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) -> CliResult<()> {
        fn need_drive<'a>(
            cfg: &'a mut ScenarioConfig,
            axis: &str,
        ) -> CliResult<&'a mut DriveSection> {
            cfg.drive.as_mut().ok_or_else(|| {
                config_err(format!("[drive] section is required to sweep `{axis}`"))
            })
        }
        match self {
            SweepAxis::PhiC => cfg.gate.phi_c = value,
            SweepAxis::TotalTime => {
                if let Some(list) = cfg.schedule.segment_durations_us.as_mut() {
                    let sum: f64 = list.iter().sum();
                    if !(sum > 0.0) {
                        return Err(config_err(
                            "segment_durations_us must sum to > 0 to sweep total_time".to_string(),
                        ));
                    }
                    for d in list.iter_mut() {
                        *d *= value / sum;
                    }
                }
                cfg.schedule.total_time_us = Some(value);
            }
            SweepAxis::LambdaPrime => cfg.schedule.lambda_prime_mhz = Some(value),
            SweepAxis::Kappa => cfg.noise.get_or_insert_with(Default::default).kappa_mhz = value,
            SweepAxis::Gamma => cfg.noise.get_or_insert_with(Default::default).gamma_mhz = value,
            SweepAxis::GammaPhi => {
                cfg.noise.get_or_insert_with(Default::default).gamma_phi_mhz = value
            }
            SweepAxis::G => need_drive(cfg, self.as_str())?.g_mhz = value,
            SweepAxis::DeltaHub => need_drive(cfg, self.as_str())?.delta_hub_mhz = value,
            SweepAxis::DeltaSpoke => need_drive(cfg, self.as_str())?.delta_spoke_mhz = value,
            SweepAxis::FockCutoff => {
                if !value.is_finite() || value.fract() != 0.0 || value < 1.0 {
                    return Err(config_err(format!(
                        "fock_cutoff sweep value {value} must be an integer >= 1"
                    )));
                }
                need_drive(cfg, self.as_str())?.fock_cutoff = value as usize;
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
