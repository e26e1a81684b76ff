use super::{
    build_design, check_loss, CoefView, CoefficientSet, Design, FittedQuantilePaths, ModelError,
    ModelSpec, QuantileGrid, SeriesData,
};

fn check_dims(view: &CoefView<'_>, design: &Design, n_levels: usize, init: &[f64]) -> Result<(), ModelError> {
    if view.n_covariates != design.n_cols() {
        return Err(ModelError::DimensionMismatch(format!(
            "coefficients have {} covariates, design has {} columns",
            view.n_covariates,
            design.n_cols()
        )));
    }
    if view.beta.len() != n_levels * view.n_covariates {
        return Err(ModelError::DimensionMismatch(format!(
            "coefficients cover {} quantiles, grid has {}",
            view.beta.len() / view.n_covariates.max(1),
            n_levels
        )));
    }
    if view.n_lags > 1 {
        return Err(ModelError::InvalidSpec(format!(
            "at most one lagged quantile is supported, got {}",
            view.n_lags
        )));
    }
    if init.len() != n_levels {
        return Err(ModelError::DimensionMismatch(format!(
            "{} initial values for {} quantiles",
            init.len(),
            n_levels
        )));
    }
    Ok(())
}

/// Walks the active rows in time order, computing
/// `Q[t,q] = x_t' beta_q + theta_q * Q[t-1,q]` with `Q[-1,q] = init[q]`, and
/// hands each finished row to `visit`.
#[inline]
fn recurse<F>(
    view: CoefView<'_>,
    design: &Design,
    init: &[f64],
    cur: &mut [f64],
    prev: &mut [f64],
    mut visit: F,
) -> Result<(), ModelError>
where
    F: FnMut(usize, &[f64]),
{
    prev.copy_from_slice(init);
    for t in 0..design.n_rows() {
        if !design.is_active(t) {
            continue;
        }
        let x = design.row(t);
        for (q, slot) in cur.iter_mut().enumerate() {
            let b = view.beta_row(q);
            let mut v = x.iter().zip(b).map(|(xi, bi)| xi * bi).sum::<f64>();
            if view.n_lags > 0 {
                v += view.theta(q) * prev[q];
            }
            if !v.is_finite() {
                return Err(ModelError::Divergent { t, q });
            }
            *slot = v;
        }
        visit(t, cur);
        prev.copy_from_slice(cur);
    }
    Ok(())
}

/// Runs the quantile recursion over the design.
pub fn quantile_recursion(
    coeffs: &CoefficientSet,
    design: &Design,
    grid: &QuantileGrid,
    init: &[f64],
) -> Result<FittedQuantilePaths, ModelError> {
    recursion_view(coeffs.view(), design, grid.len(), init)
}

pub(crate) fn recursion_view(
    view: CoefView<'_>,
    design: &Design,
    n_levels: usize,
    init: &[f64],
) -> Result<FittedQuantilePaths, ModelError> {
    check_dims(&view, design, n_levels, init)?;
    let mut values: Vec<f64> = Vec::with_capacity(design.n_rows() * n_levels);
    for t in 0..design.n_rows() {
        if !design.is_active(t) {
            values.extend_from_slice(init);
        } else {
            values.extend(std::iter::repeat_n(0.0, n_levels));
        }
    }
    let mut cur = vec![0.0; n_levels];
    let mut prev = vec![0.0; n_levels];
    recurse(view, design, init, &mut cur, &mut prev, |t, row| {
        values[t * n_levels..(t + 1) * n_levels].copy_from_slice(row);
    })?;
    Ok(FittedQuantilePaths::from_parts(
        n_levels,
        values,
        design.mask().to_vec(),
        init.to_vec(),
    ))
}

/// Type-7 (linear interpolation) sample quantile of already sorted data.
pub fn empirical_quantile(sorted: &[f64], tau: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * tau;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Sample quantiles of `values` at each grid level.
pub fn empirical_quantiles(values: &[f64], grid: &QuantileGrid) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    grid.levels()
        .iter()
        .map(|&tau| empirical_quantile(&sorted, tau))
        .collect()
}

/// The two pieces of the penalised objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    /// Average check loss over levels and active observations.
    pub pinball: f64,
    /// Average crossing distance over adjacent pairs and active observations.
    pub penalty: f64,
    pub lambda: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.pinball + self.lambda * self.penalty
    }
}

/// Crossing-penalised multi-quantile objective with its data bound in.
#[derive(Clone, Debug)]
pub struct Objective {
    design: Design,
    y: Vec<f64>,
    levels: Vec<f64>,
    lambda: f64,
    n_lags: usize,
    init: Vec<f64>,
}

impl Objective {
    pub fn new(
        data: &SeriesData,
        spec: &ModelSpec,
        grid: &QuantileGrid,
        lambda: f64,
        init: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let design = build_design(data, spec)?;
        Self::from_design(design, data.y().to_vec(), grid, lambda, spec.lagged_quantiles, init)
    }

    pub fn from_design(
        design: Design,
        y: Vec<f64>,
        grid: &QuantileGrid,
        lambda: f64,
        n_lags: usize,
        init: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        if y.len() != design.n_rows() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} responses for {} design rows",
                y.len(),
                design.n_rows()
            )));
        }
        if n_lags > 1 {
            return Err(ModelError::InvalidSpec(format!(
                "at most one lagged quantile is supported, got {n_lags}"
            )));
        }
        if init.len() != grid.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} initial values for {} quantiles",
                init.len(),
                grid.len()
            )));
        }
        if design.n_active() == 0 {
            return Err(ModelError::EmptySeries);
        }
        Ok(Self {
            design,
            y,
            levels: grid.levels().to_vec(),
            lambda,
            n_lags,
            init,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    /// Length of the flat parameter vector: Q(K+1) + QL.
    pub fn n_params(&self) -> usize {
        self.n_levels() * (self.design.n_cols() + self.n_lags)
    }

    /// Same data and initial values, different penalty weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ModelError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }

    fn flat_view<'a>(&self, delta: &'a [f64]) -> Option<CoefView<'a>> {
        if delta.len() != self.n_params() {
            return None;
        }
        let (beta, theta) = delta.split_at(self.n_levels() * self.design.n_cols());
        Some(CoefView {
            beta,
            theta,
            n_covariates: self.design.n_cols(),
            n_lags: self.n_lags,
        })
    }

    fn check_coeffs(&self, coeffs: &CoefficientSet) -> Result<(), ModelError> {
        if coeffs.n_lags() != self.n_lags {
            return Err(ModelError::DimensionMismatch(format!(
                "coefficients have {} lagged-quantile terms, model has {}",
                coeffs.n_lags(),
                self.n_lags
            )));
        }
        Ok(())
    }

    pub fn terms(&self, coeffs: &CoefficientSet) -> Result<ObjectiveTerms, ModelError> {
        self.check_coeffs(coeffs)?;
        self.terms_view(coeffs.view())
    }

    pub fn value(&self, coeffs: &CoefficientSet) -> Result<f64, ModelError> {
        Ok(self.terms(coeffs)?.total())
    }

    pub fn paths(&self, coeffs: &CoefficientSet) -> Result<FittedQuantilePaths, ModelError> {
        self.check_coeffs(coeffs)?;
        recursion_view(coeffs.view(), &self.design, self.n_levels(), &self.init)
    }

    /// Objective at a flat parameter vector (all beta rows by ascending level,
    /// then all theta). Divergent recursions and malformed inputs evaluate to
    /// `+inf`.
    pub fn value_flat(&self, delta: &[f64]) -> f64 {
        match self.flat_view(delta) {
            Some(view) => self
                .terms_view(view)
                .map(|t| t.total())
                .unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        }
    }

    pub(crate) fn terms_view(&self, view: CoefView<'_>) -> Result<ObjectiveTerms, ModelError> {
        let n_levels = self.n_levels();
        check_dims(&view, &self.design, n_levels, &self.init)?;
        let mut cur = vec![0.0; n_levels];
        let mut prev = vec![0.0; n_levels];
        let mut loss = 0.0;
        let mut crossing = 0.0;
        let levels = &self.levels;
        let y = &self.y;
        recurse(view, &self.design, &self.init, &mut cur, &mut prev, |t, row| {
            let yt = y[t];
            for (q, &fitted) in row.iter().enumerate() {
                loss += check_loss(yt - fitted, levels[q]);
            }
            for pair in row.windows(2) {
                let gap = pair[1] - pair[0];
                if gap < 0.0 {
                    crossing -= gap;
                }
            }
        })?;
        let n_eff = self.design.n_active() as f64;
        let pinball = loss / (n_levels as f64 * n_eff);
        let penalty = if n_levels > 1 {
            crossing / ((n_levels - 1) as f64 * n_eff)
        } else {
            0.0
        };
        if !(pinball.is_finite() && penalty.is_finite()) {
            return Err(ModelError::Divergent {
                t: self.design.n_rows(),
                q: 0,
            });
        }
        Ok(ObjectiveTerms {
            pinball,
            penalty,
            lambda: self.lambda,
        })
    }
}

/// Penalised multi-quantile objective: average check loss plus `lambda` times
/// the average crossing distance of the fitted paths.
pub fn dynqr_objective(
    coeffs: &CoefficientSet,
    data: &SeriesData,
    spec: &ModelSpec,
    grid: &QuantileGrid,
    lambda: f64,
    init: &[f64],
) -> Result<f64, ModelError> {
    Objective::new(data, spec, grid, lambda, init.to_vec())?.value(coeffs)
}
