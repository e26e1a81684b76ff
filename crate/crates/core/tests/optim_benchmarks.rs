use dynqr::optim::{cmaes_minimize, nelder_mead_minimize};
use dynqr::OptimOptions;

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

#[test]
fn cmaes_sphere_20d_within_budget() {
    for seed in 0..3 {
        let opts = OptimOptions {
            max_iters: Some(1_600), // 1600 generations x 12 candidates
            seed,
            ..OptimOptions::default()
        };
        let res = cmaes_minimize(sphere, &[3.0; 20], 2.0, &opts).unwrap();
        assert!(res.evaluations <= 20_000);
        assert!(res.best_value < 1e-10, "seed {seed}: {}", res.best_value);
    }
}

#[test]
fn cmaes_rosenbrock_10d_within_budget() {
    for seed in 0..10 {
        let opts = OptimOptions {
            max_iters: Some(20_000), // 20000 generations x 10 candidates
            seed,
            ..OptimOptions::default()
        };
        let res = cmaes_minimize(rosenbrock, &[0.0; 10], 0.5, &opts).unwrap();
        assert!(res.evaluations <= 200_000);
        assert!(res.best_value < 1e-6, "seed {seed}: {} after {}", res.best_value, res.evaluations);
    }
}

#[test]
fn nelder_mead_rosenbrock_2d() {
    let res = nelder_mead_minimize(rosenbrock, &[-1.2, 1.0], &OptimOptions::default()).unwrap();
    assert!(res.best_value < 1e-6);
}
