//! Forecast and estimation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CoefficientSet, FittedQuantilePaths, QuantileGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("level {0} is not on the grid")]
    LevelNotOnGrid(f64),
    #[error("no observations to score")]
    Empty,
}

/// Weighting of the quantile scores across the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `1/Q`
    Uniform,
    /// `tau (1 - tau)`
    Centre,
    /// `(1 - tau)^2`
    LeftTail,
    /// `tau^2`
    RightTail,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] = [
        WeightScheme::Uniform,
        WeightScheme::Centre,
        WeightScheme::LeftTail,
        WeightScheme::RightTail,
    ];

    pub fn weight(self, tau: f64, n_levels: usize) -> f64 {
        match self {
            WeightScheme::Uniform => 1.0 / n_levels as f64,
            WeightScheme::Centre => tau * (1.0 - tau),
            WeightScheme::LeftTail => (1.0 - tau) * (1.0 - tau),
            WeightScheme::RightTail => tau * tau,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::Centre => "centre",
            WeightScheme::LeftTail => "left_tail",
            WeightScheme::RightTail => "right_tail",
        }
    }
}

/// `2 (1{y <= q} - tau)(q - y)`.
pub fn quantile_score(y: f64, q: f64, tau: f64) -> Result<f64, ScoringError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ScoringError::InvalidLevel(tau));
    }
    Ok(qs(y, q, tau))
}

#[inline]
fn qs(y: f64, q: f64, tau: f64) -> f64 {
    let hit = if y <= q { 1.0 } else { 0.0 };
    2.0 * (hit - tau) * (q - y)
}

/// Ascending sort of one forecast vector.
pub fn rearrange(quantiles: &[f64]) -> Vec<f64> {
    let mut out = quantiles.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

fn check_forecasts(
    forecasts: &[Vec<f64>],
    realized: &[f64],
    grid: &QuantileGrid,
) -> Result<(), ScoringError> {
    if forecasts.len() != realized.len() {
        return Err(ScoringError::DimensionMismatch(format!(
            "{} forecast vectors for {} realisations",
            forecasts.len(),
            realized.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(ScoringError::Empty);
    }
    if let Some(bad) = forecasts.iter().find(|f| f.len() != grid.len()) {
        return Err(ScoringError::DimensionMismatch(format!(
            "forecast vector of length {} for {} levels",
            bad.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Weighted score of each observation: `sum_q w(tau_q) QS_{t,q}`.
pub fn qwcrps_series(
    forecasts: &[Vec<f64>],
    realized: &[f64],
    grid: &QuantileGrid,
    scheme: WeightScheme,
) -> Result<Vec<f64>, ScoringError> {
    check_forecasts(forecasts, realized, grid)?;
    let levels = grid.levels();
    let weights: Vec<f64> = levels.iter().map(|&t| scheme.weight(t, levels.len())).collect();
    Ok(forecasts
        .iter()
        .zip(realized)
        .map(|(f, &y)| {
            f.iter()
                .zip(levels)
                .zip(&weights)
                .map(|((&q, &tau), &w)| w * qs(y, q, tau))
                .sum()
        })
        .collect())
}

/// Quantile-weighted CRPS: the mean over observations of the weighted
/// quantile scores.
pub fn qwcrps(
    forecasts: &[Vec<f64>],
    realized: &[f64],
    grid: &QuantileGrid,
    scheme: WeightScheme,
) -> Result<f64, ScoringError> {
    let series = qwcrps_series(forecasts, realized, grid, scheme)?;
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Scores of one forecast set under all four schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Whether the forecast vectors were rearranged before scoring.
    pub sorted: bool,
    /// Uniform-weight score (the plain quantile score).
    pub qs: f64,
    pub centre: f64,
    pub left_tail: f64,
    pub right_tail: f64,
    /// Uniform-weight score of each observation.
    pub per_observation: Vec<f64>,
}

impl ScoreReport {
    pub fn compute(
        forecasts: &[Vec<f64>],
        realized: &[f64],
        grid: &QuantileGrid,
        sorted: bool,
    ) -> Result<Self, ScoringError> {
        let owned;
        let forecasts = if sorted {
            owned = forecasts.iter().map(|f| rearrange(f)).collect::<Vec<_>>();
            &owned[..]
        } else {
            forecasts
        };
        let per_observation = qwcrps_series(forecasts, realized, grid, WeightScheme::Uniform)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            sorted,
            qs: mean(&per_observation),
            centre: qwcrps(forecasts, realized, grid, WeightScheme::Centre)?,
            left_tail: qwcrps(forecasts, realized, grid, WeightScheme::LeftTail)?,
            right_tail: qwcrps(forecasts, realized, grid, WeightScheme::RightTail)?,
            per_observation,
        })
    }

    pub fn score(&self, scheme: WeightScheme) -> f64 {
        match scheme {
            WeightScheme::Uniform => self.qs,
            WeightScheme::Centre => self.centre,
            WeightScheme::LeftTail => self.left_tail,
            WeightScheme::RightTail => self.right_tail,
        }
    }
}

/// Percentage of entries that move when each row is sorted ascending.
pub fn crossing_incidence_rows<'a, I>(rows: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut moved = 0usize;
    let mut total = 0usize;
    for row in rows {
        let sorted = rearrange(row);
        moved += row.iter().zip(&sorted).filter(|(a, b)| a != b).count();
        total += row.len();
    }
    if total == 0 {
        0.0
    } else {
        100.0 * moved as f64 / total as f64
    }
}

/// Crossing incidence of fitted paths, over the active rows.
pub fn crossing_incidence(paths: &FittedQuantilePaths) -> f64 {
    crossing_incidence_rows(paths.active_rows())
}

/// Mean over replications of the mean absolute deviation between estimated
/// and true coefficients at level `tau`. The lagged-quantile coefficient is
/// included only when the estimate has one; a truth without one counts as 0.
pub fn coefficient_bias(
    estimates: &[CoefficientSet],
    truth: &[CoefficientSet],
    grid: &QuantileGrid,
    tau: f64,
) -> Result<f64, ScoringError> {
    if estimates.len() != truth.len() {
        return Err(ScoringError::DimensionMismatch(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(ScoringError::Empty);
    }
    let q = grid.index_of(tau).ok_or(ScoringError::LevelNotOnGrid(tau))?;
    let mut total = 0.0;
    for (est, tru) in estimates.iter().zip(truth) {
        if est.n_levels() != grid.len() || tru.n_levels() != grid.len() {
            return Err(ScoringError::DimensionMismatch(
                "coefficient sets do not match the grid".into(),
            ));
        }
        if est.n_covariates() != tru.n_covariates() {
            return Err(ScoringError::DimensionMismatch(format!(
                "{} estimated covariates, {} true",
                est.n_covariates(),
                tru.n_covariates()
            )));
        }
        let mut dev: f64 = est
            .beta_row(q)
            .iter()
            .zip(tru.beta_row(q))
            .map(|(a, b)| (a - b).abs())
            .sum();
        let mut count = est.n_covariates();
        if let Some(th) = est.theta(q) {
            dev += (th - tru.theta(q).unwrap_or(0.0)).abs();
            count += 1;
        }
        total += dev / count as f64;
    }
    Ok(total / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::crossing_distance;
    use proptest::prelude::*;

    #[test]
    fn quantile_score_examples() {
        assert_eq!(quantile_score(3.0, 3.0, 0.3).unwrap(), 0.0);
        assert_eq!(quantile_score(0.0, 1.0, 0.5).unwrap(), 1.0);
        assert!((quantile_score(1.0, 0.0, 0.9).unwrap() - 1.8).abs() < 1e-15);
        assert!(quantile_score(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn rearrange_examples() {
        assert_eq!(rearrange(&[1.0, 3.0, 2.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rearrange(&[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(rearrange(&[4.0; 3]), vec![4.0; 3]);
    }

    #[test]
    fn incidence_examples() {
        let sorted = FittedQuantilePaths::from_rows(&[vec![1.0, 2.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(crossing_incidence(&sorted), 0.0);
        let swap = FittedQuantilePaths::from_rows(&[vec![2.0, 1.0]]).unwrap();
        assert_eq!(crossing_incidence(&swap), 100.0);
        let one = FittedQuantilePaths::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]])
            .unwrap();
        assert!((crossing_incidence(&one) - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bias_examples() {
        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        let truth = CoefficientSet::from_rows(&[vec![1.0, 2.0]], &[vec![0.5]]).unwrap();
        assert_eq!(
            coefficient_bias(&[truth.clone()], &[truth.clone()], &grid, 0.5).unwrap(),
            0.0
        );
        let single = CoefficientSet::from_rows(&[vec![1.3]], &[]).unwrap();
        let single_truth = CoefficientSet::from_rows(&[vec![1.0]], &[]).unwrap();
        assert!(
            (coefficient_bias(&[single], &[single_truth], &grid, 0.5).unwrap() - 0.3).abs()
                < 1e-12
        );
        // per-replication MADs 0.2 and 0.4
        let a = CoefficientSet::from_rows(&[vec![1.2, 2.2]], &[vec![0.7]]).unwrap();
        let b = CoefficientSet::from_rows(&[vec![1.4, 2.4]], &[vec![0.9]]).unwrap();
        let bias = coefficient_bias(&[a, b], &[truth.clone(), truth], &grid, 0.5).unwrap();
        assert!((bias - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bias_without_estimated_lag_ignores_true_theta() {
        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        let truth = CoefficientSet::from_rows(&[vec![1.0]], &[vec![0.25]]).unwrap();
        let est = CoefficientSet::from_rows(&[vec![1.5]], &[]).unwrap();
        assert_eq!(coefficient_bias(&[est], &[truth], &grid, 0.5).unwrap(), 0.5);
        assert!(coefficient_bias(&[], &[], &grid, 0.5).is_err());
    }

    #[test]
    fn centre_scheme_by_hand() {
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        let f = vec![vec![-1.0, 2.0]];
        let y = [0.5];
        // QS at 0.25: 2(0 - 0.25)(-1.5) = 0.75; at 0.75: 2(1 - 0.75)(1.5) = 0.75
        let expect = 0.1875 * 0.75 + 0.1875 * 0.75;
        let got = qwcrps(&f, &y, &grid, WeightScheme::Centre).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn perfect_forecasts_score_zero() {
        let grid = QuantileGrid::deciles();
        let y = [1.0, -2.0];
        let f: Vec<Vec<f64>> = y.iter().map(|&v| vec![v; 9]).collect();
        for scheme in WeightScheme::ALL {
            assert_eq!(qwcrps(&f, &y, &grid, scheme).unwrap(), 0.0);
        }
    }

    #[test]
    fn uniform_is_plain_average() {
        let grid = QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
        let f = vec![vec![-1.0, 0.2, 1.3], vec![0.0, 0.1, 0.4]];
        let y = [0.3, 1.0];
        let mut plain = 0.0;
        for (row, &yt) in f.iter().zip(&y) {
            for (&q, &tau) in row.iter().zip(grid.levels()) {
                plain += quantile_score(yt, q, tau).unwrap();
            }
        }
        plain /= 6.0;
        let got = qwcrps(&f, &y, &grid, WeightScheme::Uniform).unwrap();
        assert!((got - plain).abs() < 1e-15);
    }

    #[test]
    fn mismatched_dimensions() {
        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        assert!(qwcrps(&[vec![1.0]], &[1.0, 2.0], &grid, WeightScheme::Uniform).is_err());
        assert!(qwcrps(&[vec![1.0, 2.0]], &[1.0], &grid, WeightScheme::Uniform).is_err());
    }

    fn forecast_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 9), n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rearrangement_never_hurts((f, y) in forecast_strategy()) {
            let grid = QuantileGrid::deciles();
            let raw = ScoreReport::compute(&f, &y, &grid, false).unwrap();
            let sorted = ScoreReport::compute(&f, &y, &grid, true).unwrap();
            prop_assert!(sorted.qs <= raw.qs + 1e-12);
        }

        #[test]
        fn order_invariant_and_homogeneous((f, y) in forecast_strategy(), c in 0.1f64..10.0) {
            let grid = QuantileGrid::deciles();
            for scheme in WeightScheme::ALL {
                let base = qwcrps(&f, &y, &grid, scheme).unwrap();
                prop_assert!(base >= 0.0);
                let mut rf = f.clone();
                let mut ry = y.clone();
                rf.reverse();
                ry.reverse();
                let rev = qwcrps(&rf, &ry, &grid, scheme).unwrap();
                prop_assert!((rev - base).abs() <= 1e-12 * (1.0 + base));
                let sf: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
                let sy: Vec<f64> = y.iter().map(|v| c * v).collect();
                let scaled = qwcrps(&sf, &sy, &grid, scheme).unwrap();
                prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + c * base));
            }
        }

        #[test]
        fn incidence_zero_iff_distance_zero(rows in prop::collection::vec(prop::collection::vec(-3i32..3, 4), 1..6)) {
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let paths = FittedQuantilePaths::from_rows(&rows).unwrap();
            let inc = crossing_incidence(&paths);
            let dist = crossing_distance(&paths).unwrap();
            prop_assert_eq!(inc == 0.0, dist == 0.0);
            prop_assert!((0.0..=100.0).contains(&inc));
        }
    }
}
