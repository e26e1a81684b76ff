use super::{CoefficientSet, Design, FittedQuantilePaths, ModelError};

/// Average thresholded crossing distance between adjacent fitted quantiles:
///
/// `1/((Q-1)T) * sum_t sum_{q>=2} max(0, -(Q[t,q] - Q[t,q-1]))`
///
/// over the active rows. Zero exactly when every active row is non-decreasing.
pub fn crossing_distance(paths: &FittedQuantilePaths) -> Result<f64, ModelError> {
    let n_levels = paths.n_levels();
    if n_levels < 2 {
        return Err(ModelError::SingleLevel);
    }
    let n_active = paths.n_active();
    if n_active == 0 {
        return Ok(0.0);
    }
    let total: f64 = paths
        .active_rows()
        .flat_map(|row| row.windows(2).map(|w| (w[0] - w[1]).max(0.0)))
        .sum();
    Ok(total / ((n_levels - 1) as f64 * n_active as f64))
}

/// Coefficient form of the crossing distance for static models (no lagged
/// quantile): `1/((Q-1)T) * sum_t sum_q max(0, -x_t' gamma_q)` with
/// `gamma_q = beta_q - beta_{q-1}`.
pub fn crossing_distance_linear(
    design: &Design,
    coeffs: &CoefficientSet,
) -> Result<f64, ModelError> {
    if coeffs.n_lags() != 0 {
        return Err(ModelError::InvalidSpec(
            "coefficient-form crossing distance needs a model without lagged quantiles".into(),
        ));
    }
    let n_levels = coeffs.n_levels();
    if n_levels < 2 {
        return Err(ModelError::SingleLevel);
    }
    if coeffs.n_covariates() != design.n_cols() {
        return Err(ModelError::DimensionMismatch(format!(
            "coefficients have {} covariates, design has {} columns",
            coeffs.n_covariates(),
            design.n_cols()
        )));
    }
    let gammas: Vec<Vec<f64>> = (1..n_levels)
        .map(|q| {
            coeffs
                .beta_row(q)
                .iter()
                .zip(coeffs.beta_row(q - 1))
                .map(|(hi, lo)| hi - lo)
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for t in design.active_indices() {
        let x = design.row(t);
        for gamma in &gammas {
            let diff: f64 = x.iter().zip(gamma).map(|(a, g)| a * g).sum();
            total += (-diff).max(0.0);
        }
    }
    Ok(total / ((n_levels - 1) as f64 * design.n_active() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_crossing_of_depth_one() {
        let paths = FittedQuantilePaths::from_rows(&[vec![2.0, 1.0]]).unwrap();
        assert_eq!(crossing_distance(&paths).unwrap(), 1.0);
    }

    #[test]
    fn one_shallow_crossing_among_four_pairs() {
        // Brute force: pairs (t,q) = (0,1),(0,2),(1,1),(1,2); only (1,2) crosses by 0.5.
        let rows = vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.5, 1.0]];
        let mut brute = 0.0;
        for r in &rows {
            for q in 1..3 {
                brute += f64::max(0.0, -(r[q] - r[q - 1]));
            }
        }
        assert_eq!(brute / 4.0, 0.125);
        let paths = FittedQuantilePaths::from_rows(&rows).unwrap();
        assert_eq!(crossing_distance(&paths).unwrap(), 0.125);
    }

    #[test]
    fn sorted_rows_have_no_crossing() {
        let paths =
            FittedQuantilePaths::from_rows(&[vec![-1.0, 0.0, 0.0, 3.0], vec![1.0, 1.0, 1.0, 1.0]])
                .unwrap();
        assert_eq!(crossing_distance(&paths).unwrap(), 0.0);
    }

    #[test]
    fn single_level_is_rejected() {
        let paths = FittedQuantilePaths::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(crossing_distance(&paths), Err(ModelError::SingleLevel));
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..8, 2usize..6).prop_flat_map(|(t, q)| {
            proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, q), t)
        })
    }

    proptest! {
        #[test]
        fn zero_iff_rows_sorted(mut rows in matrix(), sort_some in proptest::bool::ANY) {
            if sort_some {
                for r in &mut rows { r.sort_by(f64::total_cmp); }
            }
            let sorted = rows.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1]));
            let paths = FittedQuantilePaths::from_rows(&rows).unwrap();
            prop_assert_eq!(crossing_distance(&paths).unwrap() == 0.0, sorted);
        }

        #[test]
        fn continuous_under_single_entry_perturbation(
            rows in matrix(),
            pick in (0usize..64, 0usize..64),
            eps in -0.5f64..0.5,
        ) {
            let t = pick.0 % rows.len();
            let q = pick.1 % rows[0].len();
            let n_levels = rows[0].len();
            let mut bumped = rows.clone();
            bumped[t][q] += eps;
            let a = crossing_distance(&FittedQuantilePaths::from_rows(&rows).unwrap()).unwrap();
            let b = crossing_distance(&FittedQuantilePaths::from_rows(&bumped).unwrap()).unwrap();
            let bound = 2.0 * eps.abs() / ((n_levels - 1) as f64 * rows.len() as f64);
            prop_assert!((a - b).abs() <= bound + 1e-12);
        }
    }
}
