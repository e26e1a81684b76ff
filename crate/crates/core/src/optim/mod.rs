//! Derivative-free minimisers.

mod cmaes;
mod nelder_mead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cmaes::{
    cmaes_minimize, default_pop_size, estimation_pop_size, selection_weights, CmaEs, OptimState,
};
pub use nelder_mead::nelder_mead_minimize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("problem dimension must be at least 1")]
    EmptyProblem,
    #[error("starting point has a non-finite coordinate at index {0}")]
    NonFiniteStart(usize),
    #[error("initial step size must be finite and positive, got {0}")]
    InvalidStepSize(f64),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("{bounds} bounds for a {dim}-dimensional problem")]
    BoundsDimension { bounds: usize, dim: usize },
    #[error("bound {index} has lo > hi or is not finite")]
    InvalidBound { index: usize },
    #[error("covariance matrix degenerated beyond repair at generation {0}")]
    CovarianceDegenerate(usize),
    #[error("initial simplex is degenerate")]
    DegenerateSimplex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    TolFun,
    TolX,
}

/// Stopping rules and search-space settings shared by both minimisers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    /// Generation (CMA-ES) or iteration (Nelder-Mead) cap; `None` means
    /// `1000 * n`.
    pub max_iters: Option<usize>,
    /// Stop once the spread of the best fitness over the last
    /// `tol_fun_window` generations drops below this.
    pub tol_fun: f64,
    pub tol_fun_window: usize,
    /// Stop once `sigma * sqrt(max diag C)` (or the simplex diameter) drops
    /// below this.
    pub tol_x: f64,
    /// Optional per-coordinate box `[lo, hi]`.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub pop_size: Option<usize>,
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iters: None,
            tol_fun: 1e-10,
            tol_fun_window: 30,
            tol_x: 1e-12,
            bounds: None,
            pop_size: None,
            seed: 0,
        }
    }
}

impl OptimOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn max_iters_for(&self, dim: usize) -> usize {
        self.max_iters.unwrap_or(1000 * dim)
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<(), OptimError> {
        if dim == 0 {
            return Err(OptimError::EmptyProblem);
        }
        if !(self.tol_fun > 0.0 && self.tol_x > 0.0) {
            return Err(OptimError::InvalidOptions(
                "tolerances must be positive".into(),
            ));
        }
        if self.tol_fun_window == 0 {
            return Err(OptimError::InvalidOptions(
                "tol_fun_window must be at least 1".into(),
            ));
        }
        if self.pop_size == Some(0) || self.pop_size == Some(1) {
            return Err(OptimError::InvalidOptions(
                "population size must be at least 2".into(),
            ));
        }
        if let Some(bounds) = &self.bounds {
            if bounds.len() != dim {
                return Err(OptimError::BoundsDimension {
                    bounds: bounds.len(),
                    dim,
                });
            }
            for (index, &(lo, hi)) in bounds.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(OptimError::InvalidBound { index });
                }
            }
        }
        Ok(())
    }

    /// Default initial step: `0.3 * (hi - lo)` averaged over the bounded
    /// coordinates, `0.5` when unbounded.
    pub fn default_sigma0(&self) -> f64 {
        match &self.bounds {
            Some(b) if !b.is_empty() => {
                0.3 * b.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / b.len() as f64
            }
            _ => 0.5,
        }
    }

    pub(crate) fn clip(&self, x: &mut [f64]) {
        if let Some(bounds) = &self.bounds {
            for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
                *xi = xi.clamp(lo, hi);
            }
        }
    }

    pub(crate) fn feasible(&self, x: &[f64]) -> bool {
        match &self.bounds {
            Some(bounds) => x
                .iter()
                .zip(bounds)
                .all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi),
            None => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub best: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub trace: Vec<GenerationStats>,
    pub termination: Termination,
}

/// NaN counts as the worst possible fitness.
#[inline]
pub(crate) fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    }
}

pub(crate) fn check_start(x0: &[f64]) -> Result<(), OptimError> {
    if x0.is_empty() {
        return Err(OptimError::EmptyProblem);
    }
    match x0.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(OptimError::NonFiniteStart(i)),
        None => Ok(()),
    }
}
