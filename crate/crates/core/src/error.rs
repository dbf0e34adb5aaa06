use thiserror::Error;

use crate::controller::Solution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("integration failed at t = {t} s: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("event localization failed near t = {t} s")]
    EventLocalization { t: f64 },

    #[error("t = {t} s is outside the trajectory span [{start}, {end}]")]
    Range { t: f64, start: f64, end: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual norm {norm:e})")]
    NonConvergence { iterations: usize, norm: f64 },

    #[error("collocation segment failed at t = {t} s (best residual norm {norm:e})")]
    SegmentFailure { t: f64, norm: f64 },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("replay drifted {drift} K from the collocation states (limit {limit} K)")]
    Consistency { drift: f64, limit: f64 },

    #[error("chattering detected at t = {t} s after {switches} switches")]
    Chattering { t: f64, switches: usize },

    #[error("horizon reached before drying completed (S/H = {fraction:.6})")]
    IncompleteDrying {
        fraction: f64,
        partial: Box<Solution>,
    },

    #[error("no feasible control found within {evaluations} evaluations")]
    NoFeasiblePoint { evaluations: usize },

    #[error("segment starting at t = {t0} s ({policy}): {source}")]
    Segment {
        t0: f64,
        policy: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Innermost error, looking through segment context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Segment { source, .. } => source.root(),
            other => other,
        }
    }
}
