use super::{ModelError, ModelSpec, SeriesData};

/// Row-major design matrix with a per-row estimation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    active: Vec<bool>,
    column_names: Vec<String>,
}

impl Design {
    /// Build directly from rows; every row is active.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(ModelError::DimensionMismatch(
                "design rows must be non-empty and of equal length".into(),
            ));
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            values: rows.concat(),
            active: vec![true; rows.len()],
            column_names: (0..n_cols).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_cols..(t + 1) * self.n_cols]
    }

    #[inline]
    pub fn is_active(&self, t: usize) -> bool {
        self.active[t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.active
    }

    /// Effective sample size.
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_rows).filter(move |&t| self.active[t])
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
}

fn lag_columns(prev: f64, spec: &ModelSpec, out: &mut Vec<f64>) {
    if spec.lag_y == 0 {
        return;
    }
    if spec.asymmetric_slope {
        out.push(if prev > 0.0 { prev } else { 0.0 });
        out.push(if prev < 0.0 { -prev } else { 0.0 });
    } else {
        out.push(prev);
    }
}

fn exog_columns<'a>(data: &'a SeriesData, spec: &ModelSpec) -> Result<Vec<&'a [f64]>, ModelError> {
    spec.exog_columns
        .iter()
        .map(|name| {
            data.exog_column(name)
                .ok_or_else(|| ModelError::MissingColumn(name.clone()))
        })
        .collect()
}

/// Assemble the regressors x_t: intercept, the lagged-y column(s), then the
/// selected exogenous columns. Rows whose lag is undefined are masked out.
pub fn build_design(data: &SeriesData, spec: &ModelSpec) -> Result<Design, ModelError> {
    spec.validate()?;
    let n_rows = data.len();
    if n_rows == 0 {
        return Err(ModelError::EmptySeries);
    }
    if spec.lag_y >= n_rows {
        return Err(ModelError::LagTooLong {
            lag: spec.lag_y,
            len: n_rows,
        });
    }
    let exog = exog_columns(data, spec)?;
    let n_cols = spec.n_covariates();
    let y = data.y();
    let mut values = Vec::with_capacity(n_rows * n_cols);
    let mut active = Vec::with_capacity(n_rows);
    for t in 0..n_rows {
        values.push(1.0);
        let prev = if t >= spec.lag_y && spec.lag_y > 0 {
            y[t - 1]
        } else {
            0.0
        };
        lag_columns(prev, spec, &mut values);
        values.extend(exog.iter().map(|col| col[t]));
        active.push(t >= spec.lag_y);
    }
    Ok(Design {
        n_rows,
        n_cols,
        values,
        active,
        column_names: spec.column_names(),
    })
}

/// Regressors for the observation right after the end of `data`, using the
/// last observed y and caller-supplied exogenous values (in `spec` order).
pub fn next_design_row(
    data: &SeriesData,
    spec: &ModelSpec,
    next_exog: &[f64],
) -> Result<Vec<f64>, ModelError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptySeries);
    }
    if next_exog.len() != spec.exog_columns.len() {
        return Err(ModelError::MissingColumn(format!(
            "{} exogenous values supplied for {} columns",
            next_exog.len(),
            spec.exog_columns.len()
        )));
    }
    if next_exog.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteData {
            column: "exog".into(),
            row: data.len(),
        });
    }
    let mut row = Vec::with_capacity(spec.n_covariates());
    row.push(1.0);
    lag_columns(*data.y().last().unwrap(), spec, &mut row);
    row.extend_from_slice(next_exog);
    Ok(row)
}
