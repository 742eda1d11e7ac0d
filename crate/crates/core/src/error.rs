use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TlzError>;

#[derive(Debug, Error)]
pub enum TlzError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t:e} s lies outside the sweep window [0, {duration:e}] s")]
    OutsideWindow { t: f64, duration: f64 },

    #[error("sweep speed F = 0 has no finite sweep duration")]
    ZeroSpeed,

    #[error("drive field vanishes (|b| = 0); the instantaneous eigenbasis is undefined")]
    DegenerateField,

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("norm drift {drift:e} exceeds the allowed {allowed:e}")]
    NormDrift { drift: f64, allowed: f64 },

    #[error("no finite perfect-tunneling speed for kappa = 0 with a nonzero gap")]
    NoPtSpeed,

    #[error("probability maximum sits on the bracket boundary F = {at} of [{lo}, {hi}]; widen the bracket")]
    BracketBoundary { at: f64, lo: f64, hi: f64 },

    #[error("phase of A12 is undefined (|A12| = {magnitude:e})")]
    PhaseUndefined { magnitude: f64 },

    #[error("sample rate {rate:e} Hz gives fewer than {min} samples over the sweep")]
    SampleRateTooLow { rate: f64, min: usize },

    #[error("pulse program needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("sample timestamps are not strictly increasing at index {index}")]
    NonMonotoneTime { index: usize },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("invalid scan: {0}")]
    InvalidScan(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TlzError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        TlzError::InvalidParameter { name, reason: reason.into() }
    }
}
