//! Covariance matrix adaptation evolution strategy.
//!
//! Each generation draws `pop` candidates from `N(mean, sigma^2 C)`, keeps the
//! best quarter, moves the mean to their rank-weighted average, and adapts `C`
//! (rank-one plus rank-mu update) and `sigma` (cumulative step-size
//! adaptation). Selection only looks at the ranking of fitness values, so any
//! strictly increasing transform of the objective yields the same iterates.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_start, median_of_sorted, sanitize, GenerationStats, OptimError, OptimOptions,
    OptimResult, Termination,
};

const MAX_CONDITION: f64 = 1e14;
const MAX_RESAMPLES: usize = 10;

/// Recombination weights for a population of `pop`: the best `ceil(pop/4)`
/// candidates get `ln(mu + 1/2) - ln(i)`, normalised to sum to one.
pub fn selection_weights(pop: usize) -> Vec<f64> {
    let mu = pop.div_ceil(4).max(1);
    let raw: Vec<f64> = (1..=mu)
        .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Default population for generic use: `4 + floor(3 ln n)`.
pub fn default_pop_size(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// Population used when estimating quantile models: `max(100, 10 n)`.
pub fn estimation_pop_size(dim: usize) -> usize {
    (10 * dim).max(100)
}

/// Snapshot of the search distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub mean: Vec<f64>,
    /// Row-major `n x n`.
    pub covariance: Vec<f64>,
    pub step_size: f64,
    pub path_sigma: Vec<f64>,
    pub path_c: Vec<f64>,
    pub generation: usize,
    pub pop_size: usize,
    pub rng_seed: u64,
}

#[derive(Clone, Debug)]
struct Params {
    pop: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
}

impl Params {
    fn new(n: usize, pop: usize) -> Self {
        let nf = n as f64;
        let weights = selection_weights(pop);
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let cmu = (1.0 - c1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff))
            .max(0.0);
        let damps = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            pop,
            weights,
            mu_eff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
        }
    }
}

/// Stateful CMA-ES driver; `step` runs one generation.
#[derive(Clone, Debug)]
pub struct CmaEs {
    opts: OptimOptions,
    params: Params,
    n: usize,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    generation: usize,
    evaluations: usize,
    rng: ChaCha8Rng,
    best_point: Vec<f64>,
    best_value: f64,
    trace: Vec<GenerationStats>,
    recent_best: VecDeque<f64>,
}

impl CmaEs {
    pub fn new(x0: &[f64], sigma0: f64, opts: &OptimOptions) -> Result<Self, OptimError> {
        check_start(x0)?;
        let n = x0.len();
        opts.validate(n)?;
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(OptimError::InvalidStepSize(sigma0));
        }
        let pop = opts.pop_size.unwrap_or_else(|| default_pop_size(n));
        let mut start = x0.to_vec();
        opts.clip(&mut start);
        Ok(Self {
            opts: opts.clone(),
            params: Params::new(n, pop),
            n,
            mean: DVector::from_vec(start.clone()),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            best_point: start,
            best_value: f64::INFINITY,
            trace: Vec::new(),
            recent_best: VecDeque::with_capacity(opts.tol_fun_window + 1),
        })
    }

    pub fn pop_size(&self) -> usize {
        self.params.pop
    }

    pub fn weights(&self) -> &[f64] {
        &self.params.weights
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.best_point, self.best_value)
    }

    pub fn state(&self) -> OptimState {
        let mut covariance = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                covariance.push(self.cov[(i, j)]);
            }
        }
        OptimState {
            mean: self.mean.as_slice().to_vec(),
            covariance,
            step_size: self.sigma,
            path_sigma: self.path_sigma.as_slice().to_vec(),
            path_c: self.path_c.as_slice().to_vec(),
            generation: self.generation,
            pop_size: self.params.pop,
            rng_seed: self.opts.seed,
        }
    }

    /// Eigenvalues of the current covariance, ascending.
    pub fn covariance_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.scales.iter().map(|d| d * d).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `sigma * sqrt(max diag C)`.
    pub fn coordinate_scale(&self) -> f64 {
        let max_diag = (0..self.n).map(|i| self.cov[(i, i)]).fold(0.0, f64::max);
        self.sigma * max_diag.sqrt()
    }

    fn sample(&mut self) -> (DVector<f64>, DVector<f64>) {
        let mut attempt = 0;
        loop {
            let z = DVector::from_fn(self.n, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng)
            });
            let y = &self.basis * z.component_mul(&self.scales);
            let mut x = &self.mean + self.sigma * &y;
            if self.opts.feasible(x.as_slice()) {
                return (x, y);
            }
            attempt += 1;
            if attempt > MAX_RESAMPLES {
                self.opts.clip(x.as_mut_slice());
                let y = (&x - &self.mean) / self.sigma;
                return (x, y);
            }
        }
    }

    /// Decompose `C`, clamping its spectrum so the condition number stays
    /// below `MAX_CONDITION`.
    fn refresh_eigen(&mut self) -> Result<(), OptimError> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::CovarianceDegenerate(self.generation));
        }
        let eig = SymmetricEigen::new(sym);
        let max_ev = eig.eigenvalues.max();
        if !(max_ev.is_finite() && max_ev > 0.0) {
            return Err(OptimError::CovarianceDegenerate(self.generation));
        }
        let floor = max_ev / MAX_CONDITION;
        let needs_repair = eig.eigenvalues.iter().any(|&v| v < floor);
        let values = eig.eigenvalues.map(|v| v.max(floor));
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        if needs_repair {
            self.cov = &self.basis * DMatrix::from_diagonal(&values) * self.basis.transpose();
        } else {
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        debug_assert!(self.scales.iter().all(|&d| d > 0.0));
        Ok(())
    }

    /// Run one generation with sequential evaluation.
    pub fn step<F>(&mut self, mut f: F) -> Result<GenerationStats, OptimError>
    where
        F: FnMut(&[f64]) -> f64,
    {
        self.step_batch(|pop| pop.iter().map(|x| f(x)).collect())
    }

    /// Run one generation; `evaluate` receives the whole population and must
    /// return one fitness per candidate, in order.
    pub fn step_batch<F>(&mut self, evaluate: F) -> Result<GenerationStats, OptimError>
    where
        F: FnOnce(&[Vec<f64>]) -> Vec<f64>,
    {
        let pop = self.params.pop;
        let mut xs = Vec::with_capacity(pop);
        let mut ys = Vec::with_capacity(pop);
        for _ in 0..pop {
            let (x, y) = self.sample();
            xs.push(x);
            ys.push(y);
        }
        let points: Vec<Vec<f64>> = xs.iter().map(|x| x.as_slice().to_vec()).collect();
        let fitness: Vec<f64> = evaluate(&points).into_iter().map(sanitize).collect();
        assert_eq!(fitness.len(), pop, "evaluator returned the wrong number of values");
        self.evaluations += pop;

        let mut order: Vec<usize> = (0..pop).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
        let best_idx = order[0];
        if fitness[best_idx] < self.best_value {
            self.best_value = fitness[best_idx];
            self.best_point = points[best_idx].clone();
        }
        let sorted: Vec<f64> = order.iter().map(|&i| fitness[i]).collect();
        let stats = GenerationStats {
            best: sorted[0],
            median: median_of_sorted(&sorted),
        };

        self.update(&order, &ys)?;
        self.generation += 1;
        self.trace.push(stats);
        self.recent_best.push_back(stats.best);
        if self.recent_best.len() > self.opts.tol_fun_window {
            self.recent_best.pop_front();
        }
        Ok(stats)
    }

    fn update(&mut self, order: &[usize], ys: &[DVector<f64>]) -> Result<(), OptimError> {
        let p = &self.params;
        let n = self.n as f64;
        let mut y_w = DVector::zeros(self.n);
        for (w, &i) in p.weights.iter().zip(order) {
            y_w.axpy(*w, &ys[i], 1.0);
        }
        self.mean += self.sigma * &y_w;
        if !self.opts.feasible(self.mean.as_slice()) {
            self.opts.clip(self.mean.as_mut_slice());
        }

        // C^{-1/2} y_w = B D^{-1} B' y_w
        let inv_sqrt_yw = &self.basis * (self.basis.tr_mul(&y_w)).component_div(&self.scales);
        let cs = p.cs;
        self.path_sigma *= 1.0 - cs;
        self.path_sigma
            .axpy((cs * (2.0 - cs) * p.mu_eff).sqrt(), &inv_sqrt_yw, 1.0);
        let ps_norm = self.path_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powi(2 * (self.generation as i32 + 1));
        let hsig = ps_norm / decay.sqrt() / p.chi_n < 1.4 + 2.0 / (n + 1.0);

        let cc = p.cc;
        self.path_c *= 1.0 - cc;
        if hsig {
            self.path_c.axpy((cc * (2.0 - cc) * p.mu_eff).sqrt(), &y_w, 1.0);
        }

        let delta_h = if hsig { 0.0 } else { cc * (2.0 - cc) };
        let old_weight = 1.0 - p.c1 - p.cmu + p.c1 * delta_h;
        let mut cov = &self.cov * old_weight;
        cov.ger(p.c1, &self.path_c, &self.path_c, 1.0);
        for (w, &i) in p.weights.iter().zip(order) {
            cov.ger(p.cmu * w, &ys[i], &ys[i], 1.0);
        }
        self.cov = cov;

        let exponent = ((cs / p.damps) * (ps_norm / p.chi_n - 1.0)).min(1.0);
        self.sigma *= exponent.exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(OptimError::CovarianceDegenerate(self.generation));
        }
        self.refresh_eigen()
    }

    /// Termination test applied after each generation.
    pub fn should_stop(&self) -> Option<Termination> {
        if self.coordinate_scale() < self.opts.tol_x {
            return Some(Termination::TolX);
        }
        if self.recent_best.len() == self.opts.tol_fun_window {
            let (lo, hi) = self
                .recent_best
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo < self.opts.tol_fun {
                return Some(Termination::TolFun);
            }
        }
        if self.generation >= self.opts.max_iters_for(self.n) {
            return Some(Termination::MaxIters);
        }
        None
    }

    pub fn run<F>(mut self, mut f: F) -> Result<OptimResult, OptimError>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let termination = loop {
            self.step(&mut f)?;
            if let Some(reason) = self.should_stop() {
                break reason;
            }
        };
        Ok(self.into_result(termination))
    }

    pub fn into_result(self, termination: Termination) -> OptimResult {
        OptimResult {
            best_point: self.best_point,
            best_value: self.best_value,
            evaluations: self.evaluations,
            generations: self.generation,
            trace: self.trace,
            termination,
        }
    }
}

/// Minimise `f` from `x0` with initial step `sigma0`.
pub fn cmaes_minimize<F>(
    f: F,
    x0: &[f64],
    sigma0: f64,
    opts: &OptimOptions,
) -> Result<OptimResult, OptimError>
where
    F: FnMut(&[f64]) -> f64,
{
    CmaEs::new(x0, sigma0, opts)?.run(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn weights_decrease_and_sum_to_one() {
        for pop in [4, 10, 100, 101, 360] {
            let w = selection_weights(pop);
            assert_eq!(w.len(), pop.div_ceil(4));
            assert!(w.iter().all(|&v| v > 0.0));
            assert!(w.windows(2).all(|p| p[0] > p[1]));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn population_rules() {
        assert_eq!(default_pop_size(1), 4);
        assert_eq!(default_pop_size(20), 12);
        assert_eq!(estimation_pop_size(1), 100);
        assert_eq!(estimation_pop_size(10), 100);
        assert_eq!(estimation_pop_size(36), 360);
    }

    #[test]
    fn nonsmooth_one_dimensional_minimum() {
        let res = cmaes_minimize(
            |x| (x[0] - 5.0).abs(),
            &[0.0],
            1.0,
            &OptimOptions::default().with_seed(3),
        )
        .unwrap();
        assert!((res.best_point[0] - 5.0).abs() < 1e-6, "{:?}", res.best_point);
        assert_eq!(res.best_value, (res.best_point[0] - 5.0).abs());
    }

    #[test]
    fn constant_objective_stops_on_tol_fun() {
        let res = cmaes_minimize(|_| 1.0, &[0.0; 4], 0.5, &OptimOptions::default()).unwrap();
        assert_eq!(res.termination, Termination::TolFun);
        assert_eq!(res.generations, 30);
    }

    #[test]
    fn reproducible_under_seed() {
        let opts = OptimOptions {
            max_iters: Some(40),
            seed: 11,
            ..OptimOptions::default()
        };
        let a = cmaes_minimize(sphere, &[1.0; 6], 0.5, &opts).unwrap();
        let b = cmaes_minimize(sphere, &[1.0; 6], 0.5, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_transform_of_objective_gives_identical_iterates() {
        let opts = OptimOptions::default().with_seed(5);
        let mut a = CmaEs::new(&[3.0; 8], 2.0, &opts).unwrap();
        let mut b = CmaEs::new(&[3.0; 8], 2.0, &opts).unwrap();
        for _ in 0..40 {
            let sa = a.step(sphere).unwrap();
            let sb = b.step(|x| 2.0 * sphere(x) + 1.0).unwrap();
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.sigma(), b.sigma());
            assert_eq!(a.best().0, b.best().0);
            assert_eq!(2.0 * sa.best + 1.0, sb.best);
        }
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let mut es = CmaEs::new(&[-1.2, 1.0, 0.5], 0.5, &OptimOptions::default()).unwrap();
        let rosen = |x: &[f64]| {
            x.windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum::<f64>()
        };
        for _ in 0..200 {
            es.step(rosen).unwrap();
            let ev = es.covariance_eigenvalues();
            assert!(ev[0] > 0.0);
            assert!(ev[ev.len() - 1] / ev[0] <= MAX_CONDITION * (1.0 + 1e-9));
            let s = es.state();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(s.covariance[i * 3 + j], s.covariance[j * 3 + i]);
                }
            }
        }
    }

    #[test]
    fn bounded_search_never_leaves_the_box() {
        let bounds = vec![(-1.0, 0.5), (2.0, 3.0), (-0.1, 0.1)];
        let opts = OptimOptions {
            max_iters: Some(400),
            ..OptimOptions::default().with_bounds(bounds.clone())
        };
        let mut outside = 0;
        let res = cmaes_minimize(
            |x| {
                if !x.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi) {
                    outside += 1;
                }
                sphere(x)
            },
            &[0.0, 2.5, 0.0],
            opts.default_sigma0(),
            &opts,
        )
        .unwrap();
        assert_eq!(outside, 0);
        assert!((res.best_point[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn infinite_sentinel_is_tolerated() {
        let res = cmaes_minimize(
            |x| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 1.0).powi(2) + x[1] * x[1] },
            &[0.5, 0.5],
            0.5,
            &OptimOptions::default().with_seed(1),
        )
        .unwrap();
        assert!(res.best_value < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let opts = OptimOptions::default();
        assert_eq!(
            CmaEs::new(&[f64::NAN], 1.0, &opts).err(),
            Some(OptimError::NonFiniteStart(0))
        );
        assert_eq!(CmaEs::new(&[], 1.0, &opts).err(), Some(OptimError::EmptyProblem));
        assert!(CmaEs::new(&[0.0], 0.0, &opts).is_err());
        let bad = OptimOptions::default().with_bounds(vec![(1.0, 0.0)]);
        assert!(CmaEs::new(&[0.0], 1.0, &bad).is_err());
    }
}
