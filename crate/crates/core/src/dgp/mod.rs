//! Monte Carlo generator for QAR(1) and DQAR(1,1) processes whose true
//! conditional quantiles are known.
//!
//! Coefficients vary by level as `c(tau) = base + xi * Phi^{-1}(tau)`. At each
//! step the process evaluates 999 conditional quantiles (levels 0.001 to
//! 0.999), draws `U ~ U(0,1)` to pick the bracket it falls in and
//! `V ~ U(0,1)` to interpolate inside it.

mod normal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CoefficientSet, FittedQuantilePaths, ModelError, QuantileGrid, SeriesData};

pub use normal::inverse_normal_cdf;

/// Levels of the fine simulation grid: 0.001, 0.002, ..., 0.999.
pub const FINE_GRID_SIZE: usize = 999;
const FINE_STEP: f64 = 0.001;
const MAX_ATTEMPTS: usize = 100;
/// Name of the simulated exogenous column.
pub const EXOG_NAME: &str = "x";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgpError {
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("simulated quantiles crossed in {attempts} consecutive attempts")]
    Unstable { attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How much quantile variation the design lets through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Location shift only (homoskedastic).
    Y1,
    /// Intercept and exogenous coefficient vary.
    Y2,
    /// Every coefficient varies.
    Y3,
}

impl DesignKind {
    fn mask(self) -> [bool; 4] {
        match self {
            DesignKind::Y1 => [true, false, false, false],
            DesignKind::Y2 => [true, false, true, false],
            DesignKind::Y3 => [true, true, true, true],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DesignKind::Y1 => "y1",
            DesignKind::Y2 => "y2",
            DesignKind::Y3 => "y3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    /// No lagged-quantile term.
    Qar1,
    /// One lag of y and one lag of the quantile.
    Dqar11,
}

impl ProcessKind {
    pub fn label(self) -> &'static str {
        match self {
            ProcessKind::Qar1 => "qar1",
            ProcessKind::Dqar11 => "dqar11",
        }
    }
}

/// Simulation settings. Coefficient order is (intercept, y lag, exogenous,
/// quantile lag).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub theta_base: [f64; 4],
    pub xi: [f64; 4],
    pub design: DesignKind,
    pub process: ProcessKind,
    pub n_obs: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            theta_base: [2.0, 0.5, -3.0, 0.25],
            xi: [1.0, 0.15, 1.0, 0.15 / 2.0],
            design: DesignKind::Y3,
            process: ProcessKind::Dqar11,
            n_obs: 50,
            burn_in: 50,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn new(design: DesignKind, process: ProcessKind, n_obs: usize, seed: u64) -> Self {
        Self {
            design,
            process,
            n_obs,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        if self.n_obs == 0 {
            return Err(DgpError::InvalidConfig("n_obs must be positive".into()));
        }
        if self.xi.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(DgpError::InvalidConfig(
                "xi entries must be finite and non-negative".into(),
            ));
        }
        if self.theta_base.iter().any(|v| !v.is_finite()) {
            return Err(DgpError::InvalidConfig(
                "theta_base entries must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `xi` with the entries switched off by the design zeroed.
    pub fn effective_xi(&self) -> [f64; 4] {
        let mask = self.design.mask();
        let mut xi = self.xi;
        for (v, on) in xi.iter_mut().zip(mask) {
            if !on {
                *v = 0.0;
            }
        }
        xi
    }
}

/// The fine simulation grid as a `QuantileGrid`.
pub fn fine_grid() -> QuantileGrid {
    QuantileGrid::new(fine_levels().collect()).expect("fine grid is valid")
}

fn fine_levels() -> impl Iterator<Item = f64> {
    (1..=FINE_GRID_SIZE).map(|j| j as f64 / 1000.0)
}

fn level_coefficients(cfg: &DgpConfig, xi: &[f64; 4], tau: f64) -> Result<[f64; 4], DgpError> {
    let z = inverse_normal_cdf(tau)?;
    let mut c = [0.0; 4];
    for k in 0..4 {
        c[k] = cfg.theta_base[k] + xi[k] * z;
    }
    if cfg.process == ProcessKind::Qar1 {
        c[3] = 0.0;
    }
    Ok(c)
}

/// Coefficients `(intercept, y lag, exogenous, quantile lag)` at each grid
/// level. The quantile-lag coefficient is zero for QAR(1).
pub fn make_coefficients(cfg: &DgpConfig, grid: &QuantileGrid) -> Result<Vec<[f64; 4]>, DgpError> {
    let xi = cfg.effective_xi();
    grid.levels()
        .iter()
        .map(|&tau| level_coefficients(cfg, &xi, tau))
        .collect()
}

/// The true coefficients as a `CoefficientSet` over regressors
/// `(1, y_{t-1}, x_t)` with one lagged-quantile term.
pub fn true_coefficient_set(cfg: &DgpConfig, grid: &QuantileGrid) -> Result<CoefficientSet, DgpError> {
    let coefs = make_coefficients(cfg, grid)?;
    let beta: Vec<Vec<f64>> = coefs.iter().map(|c| c[..3].to_vec()).collect();
    let theta: Vec<Vec<f64>> = coefs.iter().map(|c| vec![c[3]]).collect();
    Ok(CoefficientSet::from_rows(&beta, &theta)?)
}

#[inline]
fn conditional_quantile(c: &[f64; 4], y_prev: f64, x: f64, q_prev: f64) -> f64 {
    c[0] + c[1] * y_prev + c[2] * x + c[3] * q_prev
}

/// Turn the uniforms `(u, v)` into a draw from the distribution described by
/// the fine-grid quantiles `fine` (levels `0.001 * (j + 1)`).
///
/// `u` selects the bracket between consecutive levels; draws beyond the
/// extreme levels use a bracket of width `0.001 * iqr` outside them. `v`
/// interpolates linearly from the lower to the upper end of the bracket.
pub fn draw_from_quantiles(fine: &[f64], iqr: f64, u: f64, v: f64) -> f64 {
    let last = fine.len() - 1;
    let k = (u / FINE_STEP).floor() as usize;
    let (lower, upper) = if k == 0 {
        (fine[0] - FINE_STEP * iqr, fine[0])
    } else if k > last {
        (fine[last], fine[last] + FINE_STEP * iqr)
    } else {
        (fine[k - 1], fine[k])
    };
    lower + v * (upper - lower)
}

/// Interquartile range of a fine-grid row.
pub fn fine_iqr(fine: &[f64]) -> f64 {
    // levels 0.750 and 0.250
    fine[749] - fine[249]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    /// `y` plus the exogenous column `x`.
    pub data: SeriesData,
    pub true_coefficients: CoefficientSet,
    /// True conditional quantiles on the estimation grid.
    pub true_paths: FittedQuantilePaths,
    /// Number of attempts needed to get a crossing-free sample.
    pub attempts: usize,
    pub seed: u64,
}

struct Draw {
    y: Vec<f64>,
    x: Vec<f64>,
    paths: Vec<Vec<f64>>,
    init: Vec<f64>,
}

fn simulate_once<R: Rng>(
    cfg: &DgpConfig,
    fine_coefs: &[[f64; 4]],
    est_coefs: &[[f64; 4]],
    rng: &mut R,
) -> Option<Draw> {
    let total = cfg.n_obs + cfg.burn_in;
    let mut fine_prev = vec![0.0; fine_coefs.len()];
    let mut fine_cur = vec![0.0; fine_coefs.len()];
    let mut est_prev = vec![0.0; est_coefs.len()];
    let mut y_prev = 0.0;
    let mut draw = Draw {
        y: Vec::with_capacity(cfg.n_obs),
        x: Vec::with_capacity(cfg.n_obs),
        paths: Vec::with_capacity(cfg.n_obs),
        init: vec![0.0; est_coefs.len()],
    };
    for t in 0..total {
        let x: f64 = rng.random();
        for ((cur, prev), c) in fine_cur.iter_mut().zip(&fine_prev).zip(fine_coefs) {
            *cur = conditional_quantile(c, y_prev, x, *prev);
        }
        let retained = t >= cfg.burn_in;
        if retained && fine_cur.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let est_cur: Vec<f64> = est_coefs
            .iter()
            .zip(&est_prev)
            .map(|(c, prev)| conditional_quantile(c, y_prev, x, *prev))
            .collect();
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let y = draw_from_quantiles(&fine_cur, fine_iqr(&fine_cur), u, v);
        if !y.is_finite() {
            return None;
        }
        if retained {
            if t == cfg.burn_in {
                draw.init = est_prev.clone();
            }
            draw.y.push(y);
            draw.x.push(x);
            draw.paths.push(est_cur.clone());
        }
        std::mem::swap(&mut fine_prev, &mut fine_cur);
        est_prev = est_cur;
        y_prev = y;
    }
    Some(draw)
}

/// Simulate one crossing-free sample of `cfg.n_obs` observations after the
/// burn-in, redrawing everything whenever the fine-grid quantiles cross.
pub fn simulate_path<R: Rng>(
    cfg: &DgpConfig,
    estimation_grid: &QuantileGrid,
    rng: &mut R,
) -> Result<SimulatedDataset, DgpError> {
    cfg.validate()?;
    let xi = cfg.effective_xi();
    let fine_coefs: Vec<[f64; 4]> = fine_levels()
        .map(|tau| level_coefficients(cfg, &xi, tau))
        .collect::<Result<_, _>>()?;
    let est_coefs = make_coefficients(cfg, estimation_grid)?;
    for attempt in 1..=MAX_ATTEMPTS {
        if let Some(draw) = simulate_once(cfg, &fine_coefs, &est_coefs, rng) {
            let data = SeriesData::with_exog(draw.y, vec![(EXOG_NAME.to_string(), draw.x)])?;
            let true_paths = FittedQuantilePaths::from_rows(&draw.paths)?.with_init(draw.init);
            return Ok(SimulatedDataset {
                data,
                true_coefficients: true_coefficient_set(cfg, estimation_grid)?,
                true_paths,
                attempts: attempt,
                seed: cfg.seed,
            });
        }
    }
    Err(DgpError::Unstable {
        attempts: MAX_ATTEMPTS,
    })
}

/// Seed of replication `index`, derived from `master`.
pub fn replication_seed(master: u64, index: usize) -> u64 {
    crate::derive_seed(master, index as u64)
}

/// `n_reps` independent datasets, replication `i` seeded with
/// `replication_seed(cfg.seed, i)`.
pub fn run_replications(
    cfg: &DgpConfig,
    n_reps: usize,
    estimation_grid: &QuantileGrid,
) -> Result<Vec<SimulatedDataset>, DgpError> {
    (0..n_reps)
        .map(|i| simulate_replication(cfg, i, estimation_grid))
        .collect()
}

/// Replication `index` of `run_replications`, on its own.
pub fn simulate_replication(
    cfg: &DgpConfig,
    index: usize,
    estimation_grid: &QuantileGrid,
) -> Result<SimulatedDataset, DgpError> {
    let seed = replication_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rep_cfg = DgpConfig {
        seed,
        ..cfg.clone()
    };
    simulate_path(&rep_cfg, estimation_grid, &mut rng)
}
