use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted field path, e.g. `diamond.susceptibility`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every violated invariant of a scenario, collected in one pass.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationErrors(pub Vec<Violation>);

impl ValidationErrors {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.0.iter()
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|v| v.field == field)
    }

    pub(crate) fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario:\n{0}")]
    InvalidScenario(ValidationErrors),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid override `{key}`: {message}")]
    Override { key: String, message: String },

    #[error("position {z} m is outside the teeth region (z must be >= 0)")]
    FieldDomain { z: f64 },

    #[error("field map: missing required column `{0}`")]
    MissingColumn(String),

    #[error("field map: only {usable} usable rows (need at least 2), {dropped} dropped")]
    TooFewSamples { usable: usize, dropped: usize },

    #[error("field map: {0}")]
    FieldMap(String),

    #[error("schedule truncated: the diamond falls {needed} m in 2T but the teeth region is only {available} m long (short by {shortfall} m)")]
    ScheduleTruncated {
        needed: f64,
        available: f64,
        shortfall: f64,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("jitter reordered pulse events {first} and {second}")]
    JitterReorder { first: usize, second: usize },

    #[error("gate calibration: {0}")]
    Calibration(String),

    #[error("crashed into magnets: branch {branch} reached x = {x} m at t = {t} s")]
    Crashed { branch: char, x: f64, t: f64 },

    #[error("integration failure at t = {t} s: step size underflow ({step} s)")]
    Integration { t: f64, step: f64 },

    #[error("branches not separable at readout: |dx| = {dx} m, |dv| = {dv} m/s at t = {t} s")]
    NotSeparable { t: f64, dx: f64, dv: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
