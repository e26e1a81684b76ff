//! Estimation driver: parameter packing, box bounds, start points and
//! optimizer reruns, plus an exact small-instance quantile regression solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::model::{
    build_design, empirical_quantiles, CoefficientSet, Design, FittedQuantilePaths, ModelError,
    ModelSpec, Objective, QuantileGrid, SeriesData,
};
use crate::optim::{
    cmaes_minimize, estimation_pop_size, nelder_mead_minimize, OptimError, OptimOptions,
    OptimResult,
};
use crate::scoring::crossing_incidence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid fit request: {0}")]
    InvalidRequest(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("every interpolation subset is singular")]
    AllSubsetsSingular,
    #[error("no finite objective value was found")]
    NoFiniteSolution,
}

/// Starting coefficients for the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Zeros,
    /// Per-level quantile regressions without lagged quantiles, then the
    /// best of 1000 uniform draws for each lagged-quantile coefficient.
    QrWarmStart,
    Explicit(CoefficientSet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    CmaEs,
    NelderMead,
}

/// Value of the lagged quantile before the first estimation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileInit {
    /// Empirical quantiles of the in-sample `y`.
    Empirical,
    Zeros,
}

/// Everything a fit needs except the data and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub spec: ModelSpec,
    pub grid: QuantileGrid,
    pub lambda: f64,
    pub init_strategy: InitStrategy,
    pub optimizer: OptimizerKind,
    /// `bounds` and `seed` are set by the fitter; `pop_size` defaults to
    /// `max(100, 10 * n_params)`.
    pub optim_options: OptimOptions,
    pub sigma0: f64,
    /// Box half-width for the regression coefficients.
    pub beta_bound: f64,
    /// Box half-width for the lagged-quantile coefficients.
    pub theta_bound: f64,
    pub quantile_init: QuantileInit,
    /// Independent optimizer runs; the best one is kept.
    pub restarts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            spec: ModelSpec::default(),
            grid: QuantileGrid::deciles(),
            lambda: 0.0,
            init_strategy: InitStrategy::Zeros,
            optimizer: OptimizerKind::CmaEs,
            optim_options: OptimOptions::default(),
            sigma0: 0.5,
            beta_bound: 1e3,
            theta_bound: 1.0,
            quantile_init: QuantileInit::Empirical,
            restarts: 1,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<(), FitError> {
        self.spec.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::InvalidLambda(self.lambda).into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(FitError::InvalidRequest("sigma0 must be positive".into()));
        }
        if !(self.beta_bound > 0.0 && self.beta_bound.is_finite()) {
            return Err(FitError::InvalidRequest("beta_bound must be positive".into()));
        }
        if !(self.theta_bound > 0.0 && self.theta_bound <= 1.0) {
            return Err(FitError::InvalidRequest(
                "theta_bound must lie in (0, 1]".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(FitError::InvalidRequest("restarts must be at least 1".into()));
        }
        if let InitStrategy::Explicit(c) = &self.init_strategy {
            if c.n_levels() != self.grid.len()
                || c.n_covariates() != self.spec.n_covariates()
                || c.n_lags() != self.spec.lagged_quantiles
            {
                return Err(FitError::InvalidRequest(
                    "explicit start does not match the model dimensions".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitRequest {
    pub data: SeriesData,
    pub settings: FitSettings,
    pub seed: u64,
}

impl FitRequest {
    pub fn new(data: SeriesData, settings: FitSettings, seed: u64) -> Self {
        Self {
            data,
            settings,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: CoefficientSet,
    pub paths: FittedQuantilePaths,
    pub lambda: f64,
    pub objective_value: f64,
    pub pinball_component: f64,
    pub penalty_component: f64,
    pub crossing_incidence_pct: f64,
    pub optim_diagnostics: OptimResult,
}

/// Number of free parameters: `Q (K + 1) + Q L`.
pub fn n_params(n_levels: usize, n_covariates: usize, n_lags: usize) -> usize {
    n_levels * (n_covariates + n_lags)
}

/// Flatten to `(beta rows by ascending level, then all theta)`.
pub fn pack(coeffs: &CoefficientSet) -> Vec<f64> {
    let mut out = coeffs.beta().to_vec();
    out.extend_from_slice(coeffs.theta_values());
    out
}

pub fn unpack(
    delta: &[f64],
    n_levels: usize,
    n_covariates: usize,
    n_lags: usize,
) -> Result<CoefficientSet, FitError> {
    let expected = n_params(n_levels, n_covariates, n_lags);
    if delta.len() != expected {
        return Err(FitError::LengthMismatch {
            got: delta.len(),
            expected,
        });
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteCoefficients.into());
    }
    let split = n_levels * n_covariates;
    Ok(CoefficientSet::from_parts(
        n_levels,
        n_covariates,
        n_lags,
        delta[..split].to_vec(),
        delta[split..].to_vec(),
    ))
}

fn bounds_for(settings: &FitSettings, n_levels: usize, n_covariates: usize, n_lags: usize) -> Vec<(f64, f64)> {
    let b = settings.beta_bound;
    let t = settings.theta_bound;
    let mut bounds = vec![(-b, b); n_levels * n_covariates];
    bounds.extend(std::iter::repeat_n((-t, t), n_levels * n_lags));
    bounds
}

fn recursion_init(settings: &FitSettings, design: &Design, y: &[f64]) -> Vec<f64> {
    match settings.quantile_init {
        QuantileInit::Zeros => vec![0.0; settings.grid.len()],
        QuantileInit::Empirical => {
            let active: Vec<f64> = design.active_indices().map(|t| y[t]).collect();
            empirical_quantiles(&active, &settings.grid)
        }
    }
}

fn run_optimizer(
    settings: &FitSettings,
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    bounds: Vec<(f64, f64)>,
    seed: u64,
) -> Result<OptimResult, FitError> {
    let mut opts = settings.optim_options.clone();
    opts.bounds = Some(bounds);
    opts.seed = seed;
    let result = match settings.optimizer {
        OptimizerKind::CmaEs => {
            if opts.pop_size.is_none() {
                opts.pop_size = Some(estimation_pop_size(x0.len()));
            }
            cmaes_minimize(f, x0, settings.sigma0, &opts)?
        }
        OptimizerKind::NelderMead => nelder_mead_minimize(f, x0, &opts)?,
    };
    Ok(result)
}

/// Start point from independent per-level fits.
fn qr_warm_start(
    settings: &FitSettings,
    design: &Design,
    y: &[f64],
    init: &[f64],
    seed: u64,
) -> Result<CoefficientSet, FitError> {
    let n_cov = design.n_cols();
    let n_lags = settings.spec.lagged_quantiles;
    let levels = settings.grid.levels();
    let mut beta = Vec::with_capacity(levels.len());
    let mut theta = Vec::with_capacity(levels.len());
    for (q, &tau) in levels.iter().enumerate() {
        let single = QuantileGrid::new(vec![tau])?;
        let static_obj =
            Objective::from_design(design.clone(), y.to_vec(), &single, 0.0, 0, vec![init[q]])?;
        let bounds = vec![(-settings.beta_bound, settings.beta_bound); n_cov];
        let res = run_optimizer(
            settings,
            |x| static_obj.value_flat(x),
            &vec![0.0; n_cov],
            bounds,
            derive_seed(seed, q as u64),
        )?;
        let b = res.best_point;
        if n_lags > 0 {
            let dyn_obj =
                Objective::from_design(design.clone(), y.to_vec(), &single, 0.0, 1, vec![init[q]])?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (levels.len() + q) as u64));
            let mut candidate = b.clone();
            candidate.push(0.0);
            let mut best = (f64::INFINITY, 0.0);
            for _ in 0..1000 {
                let th: f64 = rng.random::<f64>() * settings.theta_bound;
                candidate[n_cov] = th;
                let v = dyn_obj.value_flat(&candidate);
                if v < best.0 {
                    best = (v, th);
                }
            }
            theta.push(vec![best.1]);
        }
        beta.push(b);
    }
    Ok(CoefficientSet::from_rows(&beta, &theta)?)
}

/// Best run first: lowest objective, then lowest penalty, then the
/// lexicographically smallest parameter vector.
fn better(a: &(OptimResult, f64), b: &(OptimResult, f64)) -> bool {
    use std::cmp::Ordering;
    let by_value = a.0.best_value.total_cmp(&b.0.best_value);
    let by_penalty = a.1.total_cmp(&b.1);
    let by_point = a
        .0
        .best_point
        .iter()
        .zip(&b.0.best_point)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    by_value.then(by_penalty).then(by_point) == Ordering::Less
}

/// Minimise the penalised objective for one dataset.
pub fn fit(req: &FitRequest) -> Result<FitResult, FitError> {
    let settings = &req.settings;
    settings.validate()?;
    let design = build_design(&req.data, &settings.spec)?;
    let y = req.data.y();
    let init = recursion_init(settings, &design, y);
    let n_levels = settings.grid.len();
    let n_cov = design.n_cols();
    let n_lags = settings.spec.lagged_quantiles;
    let objective = Objective::from_design(
        design.clone(),
        y.to_vec(),
        &settings.grid,
        settings.lambda,
        n_lags,
        init.clone(),
    )?;
    let bounds = bounds_for(settings, n_levels, n_cov, n_lags);

    let start = match &settings.init_strategy {
        InitStrategy::Zeros => CoefficientSet::zeros(n_levels, n_cov, n_lags),
        InitStrategy::Explicit(c) => c.clone(),
        InitStrategy::QrWarmStart => {
            qr_warm_start(settings, &design, y, &init, derive_seed(req.seed, u64::MAX))?
        }
    };
    let mut x0 = pack(&start);
    for (v, &(lo, hi)) in x0.iter_mut().zip(&bounds) {
        *v = v.clamp(lo, hi);
    }

    let mut best: Option<(OptimResult, f64)> = None;
    for run in 0..settings.restarts {
        let res = run_optimizer(
            settings,
            |x| objective.value_flat(x),
            &x0,
            bounds.clone(),
            derive_seed(req.seed, run as u64),
        )?;
        let penalty = unpack(&res.best_point, n_levels, n_cov, n_lags)
            .ok()
            .and_then(|c| objective.terms(&c).ok())
            .map_or(f64::INFINITY, |t| t.penalty);
        let cand = (res, penalty);
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    let (diag, _) = best.expect("at least one run");
    if !diag.best_value.is_finite() {
        return Err(FitError::NoFiniteSolution);
    }
    let coefficients = unpack(&diag.best_point, n_levels, n_cov, n_lags)?;
    let terms = objective.terms(&coefficients)?;
    let paths = objective.paths(&coefficients)?;
    Ok(FitResult {
        crossing_incidence_pct: crossing_incidence(&paths),
        coefficients,
        paths,
        lambda: settings.lambda,
        objective_value: terms.total(),
        pinball_component: terms.pinball,
        penalty_component: terms.penalty,
        optim_diagnostics: diag,
    })
}

/// Exact regression quantile and its mean check loss.
#[derive(Clone, Debug, PartialEq)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    pub loss: f64,
}

fn solve_square(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact linear quantile regression of `y` on the active design rows by
/// enumerating every interpolating subset of `K + 1` observations. Meant for
/// small problems (tens of rows, up to three columns).
pub fn qr_oracle(design: &Design, y: &[f64], tau: f64) -> Result<QrSolution, FitError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ModelError::InvalidLevel(tau).into());
    }
    if y.len() != design.n_rows() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} responses for {} design rows",
            y.len(),
            design.n_rows()
        ))
        .into());
    }
    let rows: Vec<usize> = design.active_indices().collect();
    let k = design.n_cols();
    if k == 0 || rows.len() < k {
        return Err(FitError::InvalidRequest(
            "fewer observations than columns".into(),
        ));
    }
    let loss_of = |b: &[f64]| {
        rows.iter()
            .map(|&t| {
                let fit: f64 = design.row(t).iter().zip(b).map(|(x, c)| x * c).sum();
                let u = y[t] - fit;
                u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
            })
            .sum::<f64>()
            / rows.len() as f64
    };
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<QrSolution> = None;
    loop {
        let mut a: Vec<Vec<f64>> = idx.iter().map(|&i| design.row(rows[i]).to_vec()).collect();
        let mut b: Vec<f64> = idx.iter().map(|&i| y[rows[i]]).collect();
        if let Some(coef) = solve_square(&mut a, &mut b) {
            let loss = loss_of(&coef);
            if best.as_ref().is_none_or(|s| loss < s.loss) {
                best = Some(QrSolution {
                    coefficients: coef,
                    loss,
                });
            }
        }
        if !next_subset(&mut idx, rows.len()) {
            break;
        }
    }
    best.ok_or(FitError::AllSubsetsSingular)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(spec: ModelSpec, grid: QuantileGrid, lambda: f64) -> FitSettings {
        FitSettings {
            spec,
            grid,
            lambda,
            ..FitSettings::default()
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(n_params(9, 4, 1), 45);
        assert_eq!(n_params(1, 2, 0), 2);
    }

    #[test]
    fn pack_round_trip() {
        let c = CoefficientSet::from_rows(
            &[vec![1.0, 2.0], vec![3.0, 4.0]],
            &[vec![0.1], vec![0.2]],
        )
        .unwrap();
        let flat = pack(&c);
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 0.1, 0.2]);
        assert_eq!(unpack(&flat, 2, 2, 1).unwrap(), c);
        assert_eq!(
            unpack(&flat[..5], 2, 2, 1).err(),
            Some(FitError::LengthMismatch {
                got: 5,
                expected: 6
            })
        );
    }

    #[test]
    fn oracle_median_of_three() {
        let data = SeriesData::new(vec![1.0, 2.0, 9.0]).unwrap();
        let spec = ModelSpec {
            lag_y: 0,
            lagged_quantiles: 0,
            ..ModelSpec::default()
        };
        let design = build_design(&data, &spec).unwrap();
        let sol = qr_oracle(&design, data.y(), 0.5).unwrap();
        assert_eq!(sol.coefficients, vec![2.0]);
    }

    #[test]
    fn oracle_degenerate_quartile_compares_losses() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let data = SeriesData::new(y.clone()).unwrap();
        let spec = ModelSpec {
            lag_y: 0,
            lagged_quantiles: 0,
            ..ModelSpec::default()
        };
        let design = build_design(&data, &spec).unwrap();
        let sol = qr_oracle(&design, &y, 0.25).unwrap();
        let loss = |c: f64| {
            y.iter()
                .map(|v| {
                    let u = v - c;
                    u * (0.25 - if u < 0.0 { 1.0 } else { 0.0 })
                })
                .sum::<f64>()
                / 4.0
        };
        assert!((sol.loss - loss(1.5)).abs() < 1e-12);
        assert!(sol.coefficients[0] == 1.0 || sol.coefficients[0] == 2.0);
    }

    #[test]
    fn oracle_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..41).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let data = SeriesData::new(y.clone()).unwrap();
        let spec = ModelSpec {
            lagged_quantiles: 0,
            ..ModelSpec::default()
        };
        let design = build_design(&data, &spec).unwrap();
        assert_eq!(design.n_active(), 40);
        let sol = qr_oracle(&design, &y, 0.3).unwrap();
        let obj = Objective::from_design(
            design.clone(),
            y.clone(),
            &QuantileGrid::new(vec![0.3]).unwrap(),
            0.0,
            0,
            vec![0.0],
        )
        .unwrap();
        assert!((obj.value_flat(&sol.coefficients) - sol.loss).abs() < 1e-12);
        for _ in 0..1000 {
            let cand = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 2.0 - 1.0];
            assert!(sol.loss <= obj.value_flat(&cand) + 1e-12);
        }
    }

    #[test]
    fn oracle_singular_design() {
        let data = SeriesData::with_exog(vec![1.0, 2.0, 3.0], vec![("x".into(), vec![1.0; 3])])
            .unwrap();
        let spec = ModelSpec {
            lag_y: 0,
            lagged_quantiles: 0,
            exog_columns: vec!["x".into()],
            ..ModelSpec::default()
        };
        let design = build_design(&data, &spec).unwrap();
        assert_eq!(
            qr_oracle(&design, data.y(), 0.5).err(),
            Some(FitError::AllSubsetsSingular)
        );
    }

    fn small_series(n: usize, seed: u64) -> SeriesData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0];
        for _ in 1..n {
            let prev = *y.last().unwrap();
            y.push(0.5 + 0.4 * prev + rng.random::<f64>() - 0.5);
        }
        SeriesData::new(y).unwrap()
    }

    #[test]
    fn fit_is_deterministic_and_decomposes() {
        let data = small_series(40, 1);
        let s = settings(
            ModelSpec::default(),
            QuantileGrid::new(vec![0.25, 0.5, 0.75]).unwrap(),
            1.0,
        );
        let req = FitRequest::new(data, s, 7);
        let a = fit(&req).unwrap();
        let b = fit(&req).unwrap();
        assert_eq!(a, b);
        let total = a.pinball_component + a.lambda * a.penalty_component;
        assert!((a.objective_value - total).abs() <= 1e-12 * a.objective_value.abs().max(1.0));
        for q in 0..3 {
            assert!(a.coefficients.theta(q).unwrap().abs() <= 1.0);
        }
        assert_eq!(a.paths.n_obs(), 40);
    }

    #[test]
    fn single_level_fit_matches_oracle() {
        let data = small_series(30, 2);
        let spec = ModelSpec {
            lagged_quantiles: 0,
            ..ModelSpec::default()
        };
        let design = build_design(&data, &spec).unwrap();
        for tau in [0.1, 0.5, 0.9] {
            let s = settings(spec.clone(), QuantileGrid::new(vec![tau]).unwrap(), 0.0);
            let res = fit(&FitRequest::new(data.clone(), s, 0)).unwrap();
            let oracle = qr_oracle(&design, data.y(), tau).unwrap();
            assert!(res.pinball_component <= oracle.loss * (1.0 + 1e-3), "tau {tau}");
        }
    }

    #[test]
    fn warm_start_and_nelder_mead_run() {
        let data = small_series(40, 4);
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        let mut s = settings(ModelSpec::default(), grid, 0.0);
        s.init_strategy = InitStrategy::QrWarmStart;
        let warm = fit(&FitRequest::new(data.clone(), s.clone(), 1)).unwrap();
        assert!(warm.objective_value.is_finite());
        s.optimizer = OptimizerKind::NelderMead;
        let nm = fit(&FitRequest::new(data, s, 1)).unwrap();
        assert!(nm.objective_value.is_finite());
        for q in 0..2 {
            assert!(nm.coefficients.theta(q).unwrap().abs() <= 1.0);
        }
    }

    #[test]
    fn restarts_never_worse_than_one_run() {
        let data = small_series(30, 5);
        let mut s = settings(
            ModelSpec::default(),
            QuantileGrid::new(vec![0.3, 0.7]).unwrap(),
            1.0,
        );
        s.optim_options.max_iters = Some(30);
        let one = fit(&FitRequest::new(data.clone(), s.clone(), 9)).unwrap();
        s.restarts = 3;
        let three = fit(&FitRequest::new(data, s, 9)).unwrap();
        assert!(three.objective_value <= one.objective_value);
    }

    #[test]
    fn invalid_settings_rejected() {
        let data = small_series(20, 0);
        let mut s = FitSettings::default();
        s.lambda = -1.0;
        assert!(fit(&FitRequest::new(data.clone(), s, 0)).is_err());
        let mut s = FitSettings::default();
        s.restarts = 0;
        assert!(fit(&FitRequest::new(data.clone(), s, 0)).is_err());
        let mut s = FitSettings::default();
        s.init_strategy = InitStrategy::Explicit(CoefficientSet::zeros(2, 2, 1));
        assert!(matches!(
            fit(&FitRequest::new(data, s, 0)),
            Err(FitError::InvalidRequest(_))
        ));
    }
}
