use std::path::{Path, PathBuf};

use dynqr::backtest::{run_backtest, BacktestResult};
use dynqr::derive_seed;
use dynqr::dgp::{make_coefficients, run_replications, DgpConfig, ProcessKind, SimulatedDataset};
use dynqr::fitter::{fit, FitRequest, FitResult, FitSettings, InitStrategy, OptimizerKind};
use dynqr::optim::Termination;
use dynqr::scoring::{coefficient_bias, ScoreReport};
use dynqr::{CoefficientSet, ModelSpec, QuantileGrid, SeriesData};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BacktestConfig, FitConfig, MonteCarloConfig, SimulateConfig};
use crate::csvio::{fmt_num, level_label, write_rows, write_series};
use crate::error::CliError;
use crate::plot::{fan_chart, Series};

/// Where a command writes and what it may draw.
pub struct OutputSpec {
    pub dir: PathBuf,
    pub emit_plots: bool,
}

impl OutputSpec {
    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct LevelCoefficients {
    tau: f64,
    intercept: f64,
    y_lag: f64,
    x: f64,
    theta: f64,
}

#[derive(Serialize)]
struct ReplicationInfo {
    index: usize,
    seed: u64,
    attempts: usize,
    file: String,
}

#[derive(Serialize)]
struct Truth<'a> {
    process: ProcessKind,
    design: dynqr::dgp::DesignKind,
    n_obs: usize,
    burn_in: usize,
    coefficients: Vec<LevelCoefficients>,
    replications: &'a [ReplicationInfo],
}

pub fn simulate(
    cfg: &SimulateConfig,
    seed: u64,
    out: &OutputSpec,
) -> Result<Vec<PathBuf>, CliError> {
    if cfg.replications == 0 {
        return Err(CliError::Config("simulate.replications must be positive".into()));
    }
    let dgp = DgpConfig {
        seed,
        ..cfg.dgp.clone()
    };
    let sets = run_replications(&dgp, cfg.replications, &cfg.grid)?;
    let coefs = make_coefficients(&dgp, &cfg.grid)?;
    out.prepare()?;
    let mut written = Vec::new();
    let mut info = Vec::new();
    for (i, ds) in sets.iter().enumerate() {
        let name = format!("sim_{i:03}.csv");
        let path = out.path(&name);
        write_series(&path, &ds.data)?;
        written.push(path);
        info.push(ReplicationInfo {
            index: i,
            seed: ds.seed,
            attempts: ds.attempts,
            file: name,
        });
    }
    let truth = Truth {
        process: dgp.process,
        design: dgp.design,
        n_obs: dgp.n_obs,
        burn_in: dgp.burn_in,
        coefficients: cfg
            .grid
            .levels()
            .iter()
            .zip(&coefs)
            .map(|(&tau, c)| LevelCoefficients {
                tau,
                intercept: c[0],
                y_lag: c[1],
                x: c[2],
                theta: c[3],
            })
            .collect(),
        replications: &info,
    };
    let path = out.path("truth.json");
    write_json(&path, &truth)?;
    written.push(path);
    Ok(written)
}

#[derive(Serialize)]
struct CoefficientRow {
    tau: f64,
    /// In the order of `columns`.
    beta: Vec<f64>,
    theta: Option<f64>,
}

#[derive(Serialize)]
struct Diagnostics {
    best_value: f64,
    evaluations: usize,
    generations: usize,
    termination: Termination,
}

#[derive(Serialize)]
struct FitReport<'a> {
    lambda: f64,
    objective_value: f64,
    pinball_component: f64,
    penalty_component: f64,
    crossing_incidence_pct: f64,
    columns: Vec<String>,
    table: Vec<CoefficientRow>,
    coefficients: &'a CoefficientSet,
    init_values: &'a [f64],
    diagnostics: Diagnostics,
}

fn coefficient_rows(coeffs: &CoefficientSet, grid: &QuantileGrid) -> Vec<CoefficientRow> {
    grid.levels()
        .iter()
        .enumerate()
        .map(|(q, &tau)| CoefficientRow {
            tau,
            beta: coeffs.beta_row(q).to_vec(),
            theta: coeffs.theta(q),
        })
        .collect()
}

fn nearest_levels(grid: &QuantileGrid, wanted: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = wanted
        .iter()
        .map(|&w| {
            (0..grid.len())
                .min_by(|&a, &b| {
                    (grid.levels()[a] - w)
                        .abs()
                        .total_cmp(&(grid.levels()[b] - w).abs())
                })
                .expect("non-empty grid")
        })
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

pub fn fit_command(
    cfg: &FitConfig,
    data: &SeriesData,
    seed: u64,
    out: &OutputSpec,
) -> Result<Vec<PathBuf>, CliError> {
    let settings = &cfg.settings;
    let result = fit(&FitRequest::new(data.clone(), settings.clone(), seed))?;
    out.prepare()?;
    let mut written = Vec::new();
    let names = settings.spec.column_names();
    let diag = &result.optim_diagnostics;
    let report = FitReport {
        lambda: result.lambda,
        objective_value: result.objective_value,
        pinball_component: result.pinball_component,
        penalty_component: result.penalty_component,
        crossing_incidence_pct: result.crossing_incidence_pct,
        table: coefficient_rows(&result.coefficients, &settings.grid),
        columns: names,
        coefficients: &result.coefficients,
        init_values: result.paths.init_values(),
        diagnostics: Diagnostics {
            best_value: diag.best_value,
            evaluations: diag.evaluations,
            generations: diag.generations,
            termination: diag.termination,
        },
    };
    let path = out.path("fit.json");
    write_json(&path, &report)?;
    written.push(path);

    let mut header = vec!["t".to_string()];
    header.extend(settings.grid.levels().iter().map(|&t| level_label(t)));
    let rows: Vec<Vec<String>> = (0..result.paths.n_obs())
        .map(|t| {
            let mut row = vec![t.to_string()];
            row.extend(result.paths.row(t).iter().map(|&v| fmt_num(v)));
            row
        })
        .collect();
    let path = out.path("fitted_paths.csv");
    write_rows(&path, &header, &rows)?;
    written.push(path);

    if out.emit_plots {
        let first = settings.spec.lag_y;
        let columns: Vec<(usize, Vec<f64>)> = nearest_levels(&settings.grid, &cfg.plot_levels)
            .into_iter()
            .map(|q| (q, (first..result.paths.n_obs()).map(|t| result.paths.get(t, q)).collect()))
            .collect();
        let series: Vec<Series<'_>> = columns
            .iter()
            .map(|(q, v)| Series {
                label: format!("tau {}", settings.grid.levels()[*q]),
                values: v,
            })
            .collect();
        let path = out.path("fit.svg");
        write_text(&path, &fan_chart(data.y(), &series, first))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
enum Estimator {
    DynQr(f64),
    NelderMead,
}

impl Estimator {
    fn label(&self) -> &'static str {
        match self {
            Estimator::DynQr(_) => "dynqr",
            Estimator::NelderMead => "caviar_nm",
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            Estimator::DynQr(l) => Some(*l),
            Estimator::NelderMead => None,
        }
    }

    fn settings(&self, template: &FitSettings, spec: &ModelSpec, init: &InitStrategy) -> FitSettings {
        let mut s = template.clone();
        s.spec = spec.clone();
        s.init_strategy = init.clone();
        match self {
            Estimator::DynQr(l) => {
                s.lambda = *l;
                s.optimizer = OptimizerKind::CmaEs;
            }
            Estimator::NelderMead => {
                s.lambda = 0.0;
                s.optimizer = OptimizerKind::NelderMead;
            }
        }
        s
    }
}

fn init_label(init: &InitStrategy) -> &'static str {
    match init {
        InitStrategy::Zeros => "zeros",
        InitStrategy::QrWarmStart => "qr_warm_start",
        InitStrategy::Explicit(_) => "explicit",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasRow {
    pub estimator: String,
    pub lambda: Option<f64>,
    pub init: String,
    pub process: ProcessKind,
    pub design: dynqr::dgp::DesignKind,
    pub n_obs: usize,
    pub tau: f64,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossingRow {
    pub estimator: String,
    pub lambda: Option<f64>,
    pub init: String,
    pub process: ProcessKind,
    pub design: dynqr::dgp::DesignKind,
    pub n_obs: usize,
    pub crossing_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonteCarloTables {
    pub bias: Vec<BiasRow>,
    pub crossing: Vec<CrossingRow>,
}

fn estimators(cfg: &MonteCarloConfig) -> Vec<Estimator> {
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut out: Vec<Estimator> = lambdas.into_iter().map(Estimator::DynQr).collect();
    if cfg.nelder_mead_baseline {
        out.push(Estimator::NelderMead);
    }
    out
}

fn fit_replication(
    ds: &SimulatedDataset,
    index: usize,
    plan: &[(Estimator, InitStrategy)],
    template: &FitSettings,
    spec: &ModelSpec,
) -> Result<Vec<FitResult>, CliError> {
    plan.iter()
        .enumerate()
        .map(|(k, (est, init))| {
            let settings = est.settings(template, spec, init);
            fit(&FitRequest::new(ds.data.clone(), settings, derive_seed(ds.seed, k as u64)))
                .map_err(|e| CliError::Replication {
                    replication: index,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Simulate, fit and score every cell; the tables are ordered by process,
/// design, sample size, estimator (ascending penalty, then the baseline),
/// initial condition and level.
pub fn montecarlo_tables(cfg: &MonteCarloConfig, seed: u64) -> Result<MonteCarloTables, CliError> {
    cfg.validate()?;
    let grid = cfg.fit.grid.clone();
    let ests = estimators(cfg);
    let plan: Vec<(Estimator, InitStrategy)> = ests
        .iter()
        .flat_map(|e| cfg.init_strategies.iter().map(move |i| (e.clone(), i.clone())))
        .collect();
    let mut tables = MonteCarloTables::default();
    let mut cell = 0u64;
    for &process in &cfg.processes {
        for &design in &cfg.designs {
            for &n_obs in &cfg.sample_sizes {
                let dgp = DgpConfig {
                    design,
                    process,
                    n_obs,
                    seed: derive_seed(seed, cell),
                    ..cfg.dgp.clone()
                };
                cell += 1;
                let sets = run_replications(&dgp, cfg.replications, &grid)?;
                let lags = cfg.estimated_lags.unwrap_or(match process {
                    ProcessKind::Qar1 => 0,
                    ProcessKind::Dqar11 => 1,
                });
                let spec = ModelSpec {
                    exog_columns: vec![dynqr::dgp::EXOG_NAME.to_string()],
                    lagged_quantiles: lags,
                    ..ModelSpec::default()
                };
                let fits: Vec<Vec<FitResult>> = sets
                    .par_iter()
                    .enumerate()
                    .map(|(i, ds)| fit_replication(ds, i, &plan, &cfg.fit, &spec))
                    .collect::<Result<_, _>>()?;
                let truths: Vec<CoefficientSet> =
                    sets.iter().map(|d| d.true_coefficients.clone()).collect();
                for (k, (est, init)) in plan.iter().enumerate() {
                    let estimates: Vec<CoefficientSet> =
                        fits.iter().map(|f| f[k].coefficients.clone()).collect();
                    for &tau in &cfg.bias_levels {
                        let bias = coefficient_bias(&estimates, &truths, &grid, tau)
                            .map_err(|e| CliError::Config(e.to_string()))?;
                        tables.bias.push(BiasRow {
                            estimator: est.label().into(),
                            lambda: est.lambda(),
                            init: init_label(init).into(),
                            process,
                            design,
                            n_obs,
                            tau,
                            bias,
                        });
                    }
                    let crossing = fits.iter().map(|f| f[k].crossing_incidence_pct).sum::<f64>()
                        / fits.len() as f64;
                    tables.crossing.push(CrossingRow {
                        estimator: est.label().into(),
                        lambda: est.lambda(),
                        init: init_label(init).into(),
                        process,
                        design,
                        n_obs,
                        crossing_pct: crossing,
                    });
                }
            }
        }
    }
    Ok(tables)
}

fn lambda_field(l: Option<f64>) -> String {
    l.map(fmt_num).unwrap_or_default()
}

pub fn montecarlo(cfg: &MonteCarloConfig, seed: u64, out: &OutputSpec) -> Result<Vec<PathBuf>, CliError> {
    let tables = montecarlo_tables(cfg, seed)?;
    out.prepare()?;
    let mut written = Vec::new();
    let header: Vec<String> = ["estimator", "lambda", "init", "process", "design", "n_obs", "tau", "bias"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = tables
        .bias
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                lambda_field(r.lambda),
                r.init.clone(),
                r.process.label().into(),
                r.design.label().into(),
                r.n_obs.to_string(),
                r.tau.to_string(),
                fmt_num(r.bias),
            ]
        })
        .collect();
    for (name, value) in [("bias.csv", None), ("bias.json", Some(&tables.bias))] {
        let path = out.path(name);
        match value {
            None => write_rows(&path, &header, &rows)?,
            Some(v) => write_json(&path, v)?,
        }
        written.push(path);
    }
    let header: Vec<String> = ["estimator", "lambda", "init", "process", "design", "n_obs", "crossing_pct"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = tables
        .crossing
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                lambda_field(r.lambda),
                r.init.clone(),
                r.process.label().into(),
                r.design.label().into(),
                r.n_obs.to_string(),
                fmt_num(r.crossing_pct),
            ]
        })
        .collect();
    let path = out.path("crossing.csv");
    write_rows(&path, &header, &rows)?;
    written.push(path);
    let path = out.path("crossing.json");
    write_json(&path, &tables.crossing)?;
    written.push(path);
    Ok(written)
}

#[derive(Serialize)]
struct SchemeScores {
    qs: f64,
    centre: f64,
    left_tail: f64,
    right_tail: f64,
}

impl From<&ScoreReport> for SchemeScores {
    fn from(r: &ScoreReport) -> Self {
        Self {
            qs: r.qs,
            centre: r.centre,
            left_tail: r.left_tail,
            right_tail: r.right_tail,
        }
    }
}

#[derive(Serialize)]
struct BacktestReport {
    n_forecasts: usize,
    unsorted: SchemeScores,
    sorted: SchemeScores,
}

pub fn backtest(
    cfg: &BacktestConfig,
    data: &SeriesData,
    seed: u64,
    out: &OutputSpec,
) -> Result<(BacktestResult, Vec<PathBuf>), CliError> {
    let plan = &cfg.plan;
    if data.len() < plan.initial_window + 2 {
        return Err(CliError::Config(format!(
            "series has {} rows, backtest needs at least initial_window + 2 = {}",
            data.len(),
            plan.initial_window + 2
        )));
    }
    let result = run_backtest(data, plan, seed)?;
    out.prepare()?;
    let mut written = Vec::new();
    let grid = &plan.fit.grid;
    let label = |t: usize| match data.timestamps() {
        Some(ts) => ts[t].clone(),
        None => t.to_string(),
    };

    let mut header = vec!["origin".to_string(), "t".into(), "realized".into()];
    header.extend(grid.levels().iter().map(|&t| level_label(t)));
    header.extend(["qs_unsorted".to_string(), "qs_sorted".into()]);
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.origin.to_string(), label(r.origin), fmt_num(r.realized)];
            row.extend(r.forecast.iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(result.unsorted.per_observation[i]));
            row.push(fmt_num(result.sorted.per_observation[i]));
            row
        })
        .collect();
    let path = out.path("forecasts.csv");
    write_rows(&path, &header, &rows)?;
    written.push(path);

    let names = plan.fit.spec.column_names();
    let mut header = vec!["origin".to_string(), "refit".into(), "tau".into()];
    header.extend(names.iter().cloned());
    if plan.fit.spec.lagged_quantiles > 0 {
        header.push("theta".into());
    }
    let mut rows = Vec::new();
    for r in &result.records {
        for (q, &tau) in grid.levels().iter().enumerate() {
            let mut row = vec![r.origin.to_string(), r.refit.to_string(), tau.to_string()];
            row.extend(r.coefficients.beta_row(q).iter().map(|&v| fmt_num(v)));
            if let Some(th) = r.coefficients.theta(q) {
                row.push(fmt_num(th));
            }
            rows.push(row);
        }
    }
    let path = out.path("coefficients.csv");
    write_rows(&path, &header, &rows)?;
    written.push(path);

    let report = BacktestReport {
        n_forecasts: result.records.len(),
        unsorted: (&result.unsorted).into(),
        sorted: (&result.sorted).into(),
    };
    let path = out.path("scores.json");
    write_json(&path, &report)?;
    written.push(path);

    if out.emit_plots {
        let start = plan.initial_window;
        let columns: Vec<(usize, Vec<f64>)> = nearest_levels(grid, &[0.05, 0.5, 0.95])
            .into_iter()
            .map(|q| (q, result.records.iter().map(|r| r.forecast[q]).collect()))
            .collect();
        let series: Vec<Series<'_>> = columns
            .iter()
            .map(|(q, v)| Series {
                label: format!("tau {}", grid.levels()[*q]),
                values: v,
            })
            .collect();
        let path = out.path("forecasts.svg");
        write_text(&path, &fan_chart(data.y(), &series, start))?;
        written.push(path);
    }
    Ok((result, written))
}
