//! Expanding-window one-step-ahead forecasting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::fitter::{fit, FitError, FitRequest, FitSettings, InitStrategy};
use crate::model::{
    next_design_row, CoefficientSet, FittedQuantilePaths, ModelError, ModelSpec, Objective,
    SeriesData,
};
use crate::scoring::{ScoreReport, ScoringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("series of length {len} is too short for an initial window of {initial_window}")]
    TooShort { len: usize, initial_window: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("fit failed at origin {origin}: {source}")]
    Fit { origin: usize, source: FitError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestPlan {
    pub initial_window: usize,
    /// Only one-step-ahead forecasts are supported.
    pub horizon: usize,
    /// Refit every this many origins; in between, the last coefficients are
    /// run forward over the new data.
    pub refit_every: usize,
    /// Start each refit from the previous window's coefficients.
    pub warm_start: bool,
    /// Initial CMA-ES step size for warm-started refits.
    pub warm_sigma0: f64,
    /// Fixed-width window instead of an expanding one.
    pub rolling_window: Option<usize>,
    pub fit: FitSettings,
}

impl Default for BacktestPlan {
    fn default() -> Self {
        Self {
            initial_window: 100,
            horizon: 1,
            refit_every: 1,
            warm_start: true,
            warm_sigma0: 0.1,
            rolling_window: None,
            fit: FitSettings::default(),
        }
    }
}

impl BacktestPlan {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.horizon != 1 {
            return Err(BacktestError::InvalidPlan(format!(
                "only horizon 1 is supported, got {}",
                self.horizon
            )));
        }
        if !(self.warm_sigma0 > 0.0 && self.warm_sigma0.is_finite()) {
            return Err(BacktestError::InvalidPlan("warm_sigma0 must be positive".into()));
        }
        if self.refit_every == 0 {
            return Err(BacktestError::InvalidPlan("refit_every must be at least 1".into()));
        }
        if self.initial_window < self.fit.spec.lag_y + 2 {
            return Err(BacktestError::InvalidPlan(
                "initial_window must exceed the lag order by at least 2".into(),
            ));
        }
        if let Some(w) = self.rolling_window {
            if w < self.fit.spec.lag_y + 2 || w > self.initial_window {
                return Err(BacktestError::InvalidPlan(
                    "rolling_window must lie between the lag order + 2 and initial_window".into(),
                ));
            }
        }
        self.fit.validate().map_err(|source| BacktestError::Fit { origin: 0, source })
    }

    /// Origins (number of in-sample observations) that get a forecast:
    /// `initial_window ..= len - 1 - horizon`.
    pub fn origins(&self, len: usize) -> std::ops::Range<usize> {
        self.initial_window..len.saturating_sub(self.horizon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Number of in-sample observations; also the 0-based index of the
    /// forecast target.
    pub origin: usize,
    pub forecast: Vec<f64>,
    pub realized: f64,
    pub coefficients: CoefficientSet,
    /// Whether the coefficients were re-estimated at this origin.
    pub refit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub records: Vec<ForecastRecord>,
    pub unsorted: ScoreReport,
    pub sorted: ScoreReport,
}

/// Advance the recursion one step past the end of `data`:
/// `x_{n+1}' beta_q + theta_q * Q[n, q]`, with `Q[n, .]` the last active
/// row of the in-sample paths. `next_exog` is in `spec` order.
pub fn one_step_forecast(
    coeffs: &CoefficientSet,
    data: &SeriesData,
    spec: &ModelSpec,
    last_paths: &FittedQuantilePaths,
    next_exog: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let x = next_design_row(data, spec, next_exog)?;
    if x.len() != coeffs.n_covariates() {
        return Err(ModelError::DimensionMismatch(format!(
            "coefficients have {} covariates, design row has {}",
            coeffs.n_covariates(),
            x.len()
        )));
    }
    let last = last_paths.last_active_row().ok_or(ModelError::EmptySeries)?;
    if last.len() != coeffs.n_levels() {
        return Err(ModelError::DimensionMismatch(
            "paths and coefficients cover different grids".into(),
        ));
    }
    Ok((0..coeffs.n_levels())
        .map(|q| {
            let lin: f64 = x.iter().zip(coeffs.beta_row(q)).map(|(a, b)| a * b).sum();
            lin + coeffs.theta(q).map_or(0.0, |th| th * last[q])
        })
        .collect())
}

fn exog_at(data: &SeriesData, spec: &ModelSpec, t: usize) -> Result<Vec<f64>, ModelError> {
    spec.exog_columns
        .iter()
        .map(|name| {
            data.exog_column(name)
                .map(|c| c[t])
                .ok_or_else(|| ModelError::MissingColumn(name.clone()))
        })
        .collect()
}

/// Fit on each window, forecast the next observation, then score the raw and
/// the rearranged forecast vectors.
pub fn run_backtest(
    data: &SeriesData,
    plan: &BacktestPlan,
    seed: u64,
) -> Result<BacktestResult, BacktestError> {
    plan.validate()?;
    if data.len() < plan.initial_window + plan.horizon + 1 {
        return Err(BacktestError::TooShort {
            len: data.len(),
            initial_window: plan.initial_window,
        });
    }
    let spec = &plan.fit.spec;
    let mut records = Vec::new();
    let mut previous: Option<(CoefficientSet, Vec<f64>)> = None;
    for (k, origin) in plan.origins(data.len()).enumerate() {
        let start = plan.rolling_window.map_or(0, |w| origin - w);
        let window = data.window(start, origin);
        let refit = k % plan.refit_every == 0 || previous.is_none();
        let (coefficients, paths) = if refit {
            let mut settings = plan.fit.clone();
            if plan.warm_start {
                if let Some((prev, _)) = &previous {
                    settings.init_strategy = InitStrategy::Explicit(prev.clone());
                    settings.sigma0 = plan.warm_sigma0;
                }
            }
            let res = fit(&FitRequest::new(window.clone(), settings, derive_seed(seed, origin as u64)))
                .map_err(|source| BacktestError::Fit { origin, source })?;
            (res.coefficients, res.paths)
        } else {
            let (coeffs, init) = previous.as_ref().expect("previous fit");
            let obj = Objective::new(&window, spec, &plan.fit.grid, plan.fit.lambda, init.clone())?;
            (coeffs.clone(), obj.paths(coeffs)?)
        };
        let forecast = one_step_forecast(
            &coefficients,
            &window,
            spec,
            &paths,
            &exog_at(data, spec, origin)?,
        )?;
        records.push(ForecastRecord {
            origin,
            forecast,
            realized: data.y()[origin],
            coefficients: coefficients.clone(),
            refit,
        });
        previous = Some((coefficients, paths.init_values().to_vec()));
    }
    let forecasts: Vec<Vec<f64>> = records.iter().map(|r| r.forecast.clone()).collect();
    let realized: Vec<f64> = records.iter().map(|r| r.realized).collect();
    Ok(BacktestResult {
        unsorted: ScoreReport::compute(&forecasts, &realized, &plan.fit.grid, false)?,
        sorted: ScoreReport::compute(&forecasts, &realized, &plan.fit.grid, true)?,
        records,
    })
}
