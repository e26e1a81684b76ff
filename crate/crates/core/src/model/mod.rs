//! Multi-quantile dynamic model: domain types, design construction, the
//! quantile recursion, the check loss, the crossing-distance penalty and the
//! penalised objective built from them.

mod crossing;
mod design;
mod objective;
mod types;

use thiserror::Error;

pub use crossing::{crossing_distance, crossing_distance_linear};
pub use design::{build_design, next_design_row, Design};
pub use objective::{
    dynqr_objective, empirical_quantile, empirical_quantiles, quantile_recursion, Objective,
    ObjectiveTerms,
};
pub use types::{CoefficientSet, FittedQuantilePaths, ModelSpec, QuantileGrid, SeriesData};

pub(crate) use types::CoefView;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("quantile level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("series is empty")]
    EmptySeries,
    #[error("lag {lag} needs more than {len} observations")]
    LagTooLong { lag: usize, len: usize },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteData { column: String, row: usize },
    #[error("missing exogenous column `{0}`")]
    MissingColumn(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coefficients contain non-finite values")]
    NonFiniteCoefficients,
    #[error("recursion diverged at row {t}, quantile {q}")]
    Divergent { t: usize, q: usize },
    #[error("crossing measures need at least two quantile levels")]
    SingleLevel,
    #[error("penalty weight must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

/// Check (pinball) loss `u * (tau - 1{u < 0})`.
pub fn pinball_loss(u: f64, tau: f64) -> Result<f64, ModelError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ModelError::InvalidLevel(tau));
    }
    Ok(check_loss(u, tau))
}

#[inline]
pub(crate) fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}
