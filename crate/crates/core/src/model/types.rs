use serde::{Deserialize, Serialize};

use super::ModelError;

/// Strictly increasing set of quantile levels inside (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, ModelError> {
        if levels.is_empty() {
            return Err(ModelError::InvalidGrid("grid has no levels".into()));
        }
        for &tau in &levels {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(ModelError::InvalidGrid(format!(
                    "level {tau} outside (0, 1)"
                )));
            }
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidGrid(
                "levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// The nine deciles 0.1, 0.2, ..., 0.9.
    pub fn deciles() -> Self {
        Self {
            levels: (1..=9).map(|k| k as f64 / 10.0).collect(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Position of `tau` in the grid, compared with a 1e-12 tolerance.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - tau).abs() < 1e-12)
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = ModelError;

    fn try_from(levels: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(levels)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(grid: QuantileGrid) -> Self {
        grid.levels
    }
}

/// A univariate series with optional exogenous covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesData {
    y: Vec<f64>,
    exog_names: Vec<String>,
    /// One vector per exogenous column, each of length `y.len()`.
    exog: Vec<Vec<f64>>,
    timestamps: Option<Vec<String>>,
}

impl SeriesData {
    pub fn new(y: Vec<f64>) -> Result<Self, ModelError> {
        Self::with_exog(y, Vec::new())
    }

    pub fn with_exog(y: Vec<f64>, exog: Vec<(String, Vec<f64>)>) -> Result<Self, ModelError> {
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteData {
                column: "y".into(),
                row: t,
            });
        }
        let mut names = Vec::with_capacity(exog.len());
        let mut columns = Vec::with_capacity(exog.len());
        for (name, col) in exog {
            if col.len() != y.len() {
                return Err(ModelError::DimensionMismatch(format!(
                    "exogenous column `{name}` has {} rows, y has {}",
                    col.len(),
                    y.len()
                )));
            }
            if let Some(t) = col.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteData { column: name, row: t });
            }
            if names.contains(&name) {
                return Err(ModelError::InvalidSpec(format!(
                    "duplicate exogenous column `{name}`"
                )));
            }
            names.push(name);
            columns.push(col);
        }
        Ok(Self {
            y,
            exog_names: names,
            exog: columns,
            timestamps: None,
        })
    }

    pub fn with_timestamps(mut self, timestamps: Vec<String>) -> Result<Self, ModelError> {
        if timestamps.len() != self.y.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} timestamps for {} observations",
                timestamps.len(),
                self.y.len()
            )));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn exog_names(&self) -> &[String] {
        &self.exog_names
    }

    pub fn exog_column(&self, name: &str) -> Option<&[f64]> {
        self.exog_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.exog[i].as_slice())
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// The first `len` observations.
    pub fn truncated(&self, len: usize) -> SeriesData {
        self.window(0, len)
    }

    /// Observations `start..end`.
    pub fn window(&self, start: usize, end: usize) -> SeriesData {
        let end = end.min(self.len());
        let start = start.min(end);
        SeriesData {
            y: self.y[start..end].to_vec(),
            exog_names: self.exog_names.clone(),
            exog: self.exog.iter().map(|c| c[start..end].to_vec()).collect(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
        }
    }
}

/// Which regressors enter the quantile equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Autoregressive lags of y in the design (0 or 1).
    pub lag_y: usize,
    /// Split |y_{t-1}| into positive and negative parts.
    pub asymmetric_slope: bool,
    /// Lagged-quantile terms (0 or 1).
    pub lagged_quantiles: usize,
    pub include_intercept: bool,
    pub exog_columns: Vec<String>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            lag_y: 1,
            asymmetric_slope: false,
            lagged_quantiles: 1,
            include_intercept: true,
            exog_columns: Vec::new(),
        }
    }
}

impl ModelSpec {
    /// Intercept-only model, optionally with a lagged quantile.
    pub fn intercept_only(lagged_quantiles: usize) -> Self {
        Self {
            lag_y: 0,
            asymmetric_slope: false,
            lagged_quantiles,
            include_intercept: true,
            exog_columns: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lag_y > 1 {
            return Err(ModelError::InvalidSpec(format!(
                "lag_y must be 0 or 1, got {}",
                self.lag_y
            )));
        }
        if self.lagged_quantiles > 1 {
            return Err(ModelError::InvalidSpec(format!(
                "lagged_quantiles must be 0 or 1, got {}",
                self.lagged_quantiles
            )));
        }
        if self.asymmetric_slope && self.lag_y == 0 {
            return Err(ModelError::InvalidSpec(
                "asymmetric_slope requires lag_y >= 1".into(),
            ));
        }
        if !self.include_intercept {
            return Err(ModelError::InvalidSpec(
                "the first regressor must be the intercept".into(),
            ));
        }
        Ok(())
    }

    /// Number of design columns, K + 1.
    pub fn n_covariates(&self) -> usize {
        let lag_cols = match (self.lag_y, self.asymmetric_slope) {
            (0, _) => 0,
            (_, true) => 2,
            (_, false) => 1,
        };
        1 + lag_cols + self.exog_columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        if self.lag_y == 1 {
            if self.asymmetric_slope {
                names.push("abs_y_lag_pos".into());
                names.push("abs_y_lag_neg".into());
            } else {
                names.push("y_lag".into());
            }
        }
        names.extend(self.exog_columns.iter().cloned());
        names
    }
}

/// Per-quantile coefficients: a Q x (K+1) block of covariate coefficients and
/// a Q x L block of own-lag quantile coefficients. Both are stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    n_levels: usize,
    n_covariates: usize,
    n_lags: usize,
    beta: Vec<f64>,
    theta: Vec<f64>,
}

impl CoefficientSet {
    pub fn zeros(n_levels: usize, n_covariates: usize, n_lags: usize) -> Self {
        Self {
            n_levels,
            n_covariates,
            n_lags,
            beta: vec![0.0; n_levels * n_covariates],
            theta: vec![0.0; n_levels * n_lags],
        }
    }

    /// Build from per-quantile rows. `theta` may be empty for L = 0.
    pub fn from_rows(beta: &[Vec<f64>], theta: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n_levels = beta.len();
        if n_levels == 0 {
            return Err(ModelError::DimensionMismatch("no quantile rows".into()));
        }
        let n_covariates = beta[0].len();
        if beta.iter().any(|r| r.len() != n_covariates) {
            return Err(ModelError::DimensionMismatch(
                "beta rows have unequal lengths".into(),
            ));
        }
        let n_lags = if theta.is_empty() {
            0
        } else {
            if theta.len() != n_levels {
                return Err(ModelError::DimensionMismatch(format!(
                    "{} theta rows for {} quantiles",
                    theta.len(),
                    n_levels
                )));
            }
            theta[0].len()
        };
        if theta.iter().any(|r| r.len() != n_lags) {
            return Err(ModelError::DimensionMismatch(
                "theta rows have unequal lengths".into(),
            ));
        }
        let set = Self {
            n_levels,
            n_covariates,
            n_lags,
            beta: beta.concat(),
            theta: theta.concat(),
        };
        set.check_finite()?;
        Ok(set)
    }

    pub(crate) fn from_parts(
        n_levels: usize,
        n_covariates: usize,
        n_lags: usize,
        beta: Vec<f64>,
        theta: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(beta.len(), n_levels * n_covariates);
        debug_assert_eq!(theta.len(), n_levels * n_lags);
        Self {
            n_levels,
            n_covariates,
            n_lags,
            beta,
            theta,
        }
    }

    fn check_finite(&self) -> Result<(), ModelError> {
        if self.beta.iter().chain(&self.theta).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::NonFiniteCoefficients)
        }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    pub fn beta_row(&self, q: usize) -> &[f64] {
        &self.beta[q * self.n_covariates..(q + 1) * self.n_covariates]
    }

    pub fn beta_row_mut(&mut self, q: usize) -> &mut [f64] {
        &mut self.beta[q * self.n_covariates..(q + 1) * self.n_covariates]
    }

    /// Lagged-quantile coefficient of row `q`, if the set has one.
    pub fn theta(&self, q: usize) -> Option<f64> {
        (self.n_lags > 0).then(|| self.theta[q * self.n_lags])
    }

    pub fn set_theta(&mut self, q: usize, value: f64) {
        assert!(self.n_lags > 0, "coefficient set has no lagged-quantile term");
        self.theta[q * self.n_lags] = value;
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn theta_values(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn view(&self) -> CoefView<'_> {
        CoefView {
            beta: &self.beta,
            theta: &self.theta,
            n_covariates: self.n_covariates,
            n_lags: self.n_lags,
        }
    }
}

/// Borrowed coefficients; lets the objective read a flat parameter vector
/// without allocating.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CoefView<'a> {
    pub beta: &'a [f64],
    pub theta: &'a [f64],
    pub n_covariates: usize,
    pub n_lags: usize,
}

impl<'a> CoefView<'a> {
    #[inline]
    pub fn beta_row(&self, q: usize) -> &'a [f64] {
        &self.beta[q * self.n_covariates..(q + 1) * self.n_covariates]
    }

    #[inline]
    pub fn theta(&self, q: usize) -> f64 {
        if self.n_lags == 0 {
            0.0
        } else {
            self.theta[q * self.n_lags]
        }
    }
}

/// Fitted quantiles, one row per observation and one column per level.
///
/// Rows excluded from the estimation sample (undefined lags) are inactive:
/// they hold the initial values and are ignored by the loss and by the
/// crossing measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedQuantilePaths {
    n_obs: usize,
    n_levels: usize,
    values: Vec<f64>,
    active: Vec<bool>,
    init_values: Vec<f64>,
}

impl FittedQuantilePaths {
    /// Paths with every row active.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n_levels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_levels) {
            return Err(ModelError::DimensionMismatch(
                "path rows have unequal lengths".into(),
            ));
        }
        let values = rows.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteData {
                column: "paths".into(),
                row: values.iter().position(|v| !v.is_finite()).unwrap() / n_levels.max(1),
            });
        }
        Ok(Self {
            n_obs: rows.len(),
            n_levels,
            values,
            active: vec![true; rows.len()],
            init_values: vec![0.0; n_levels],
        })
    }

    pub(crate) fn from_parts(
        n_levels: usize,
        values: Vec<f64>,
        active: Vec<bool>,
        init_values: Vec<f64>,
    ) -> Self {
        Self {
            n_obs: active.len(),
            n_levels,
            values,
            active,
            init_values,
        }
    }

    /// Replace the stored initial values.
    pub fn with_init(mut self, init_values: Vec<f64>) -> Self {
        assert_eq!(init_values.len(), self.n_levels, "init length mismatch");
        self.init_values = init_values;
        self
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// All values, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_levels..(t + 1) * self.n_levels]
    }

    pub fn get(&self, t: usize, q: usize) -> f64 {
        self.values[t * self.n_levels + q]
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.active[t]
    }

    pub fn active_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_obs)
            .filter(|&t| self.active[t])
            .map(|t| self.row(t))
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn init_values(&self) -> &[f64] {
        &self.init_values
    }

    /// Fitted quantiles at the last active row.
    pub fn last_active_row(&self) -> Option<&[f64]> {
        (0..self.n_obs).rev().find(|&t| self.active[t]).map(|t| self.row(t))
    }
}
