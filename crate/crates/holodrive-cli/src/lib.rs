//! Scenario runner around the `holodrive` library: TOML configs in, reports
//! and CSV tables out. Everything the binary does lives here so tests can
//! drive it in-process.

pub mod campaign;
pub mod config;

pub use campaign::{execute_run, execute_sweep, write_run_outputs, write_sweep_outputs, SweepRow};
pub use config::{parse_config, NormalizedConfig, SweepAxis};

/// Failure category, mapped one-to-one onto process exit codes so callers
/// can tell a bad config from a physics guard from a filesystem problem.
#[derive(Debug)]
pub enum CliError {
    /// Schema or value error in the config or sweep request (exit 2).
    Config(String),
    /// Physics guard or integration failure during a run (exit 3).
    Physics(String),
    /// Filesystem or encoding failure (exit 4).
    Io(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Physics(_) => "physics",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Physics(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Physics(m) | CliError::Io(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.category(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// CSV cell for one number: `.` decimal separator, exponent notation for
/// small magnitudes so spreadsheet imports never round them to zero.
pub fn csv_number(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// CSV cell for free text: quoted (with `""` escapes) only when needed.
pub fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_numbers_use_exponent_notation() {
        assert_eq!(csv_number(0.0), "0");
        assert_eq!(csv_number(-0.0), "0");
        assert_eq!(csv_number(1.92e-4), "1.92e-4");
        assert_eq!(csv_number(-5e-7), "-5e-7");
        assert_eq!(csv_number(0.25), "0.25");
        assert_eq!(csv_number(1600.0), "1600");
        let f: f64 = csv_number(0.1 + 0.2).parse().unwrap();
        assert_eq!(f, 0.1 + 0.2);
    }

    #[test]
    fn text_cells_quote_only_when_needed() {
        assert_eq!(csv_text("ok"), "ok");
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
