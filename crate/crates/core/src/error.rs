use thiserror::Error;

use crate::curve::AdmissibilityReport;

/// Errors raised while building or evaluating an embedding.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("masses sum to {total}, expected 1")]
    NotProbability { total: f64 },
    #[error("measure has mean {mean}, expected 0")]
    NotCentered { mean: f64 },
    #[error("bad atom at {location}: {reason}")]
    BadAtom { location: f64, reason: &'static str },
    #[error("bad density: {0}")]
    BadDensity(String),
    #[error("bad preset: {0}")]
    BadPreset(String),
    #[error("bad curve: {0}")]
    BadCurve(String),
    #[error("curve starts above the potential (h(0) = {h0} > c(F(0)) = {c0})")]
    CurveAboveC { h0: f64, c0: f64 },
    #[error("point ({f}, {h}) lies above the potential c(F) = {c}")]
    PointAboveC { f: f64, h: f64, c: f64 },
    #[error("curve is not admissible for this measure ({} violations, touches_c = {})", .0.violations.len(), .0.touches_c)]
    NotAdmissible(Box<AdmissibilityReport>),
    #[error("slope gap R - S vanished at s = {s} before the curve met the potential")]
    DegenerateCurve { s: f64 },
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("identity local-time estimator requires the local-time preset")]
    WrongPreset,
    #[error("stopping boundaries are not strictly monotone near l = {l}; the dual certificate needs a density target")]
    DegenerateBoundaries { l: f64 },
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;
