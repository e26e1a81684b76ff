//! Bounded Nelder-Mead simplex search with restarts.
//!
//! Trial points are clipped coordinate-wise onto the box, so the objective is
//! never evaluated outside it.

use super::{
    check_start, median_of_sorted, sanitize, GenerationStats, OptimError, OptimOptions,
    OptimResult, Termination,
};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
const MAX_RESTARTS: usize = 20;

struct Simplex {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Simplex {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.iter().map(|&i| self.points[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.points[0];
        self.points[1..]
            .iter()
            .flat_map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    fn spread(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }
}

struct Counter<'a, F> {
    f: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        sanitize((self.f)(x))
    }
}

fn initial_simplex<F: FnMut(&[f64]) -> f64>(
    start: &[f64],
    opts: &OptimOptions,
    counter: &mut Counter<'_, F>,
) -> Result<Simplex, OptimError> {
    let n = start.len();
    let mut points = vec![start.to_vec()];
    for i in 0..n {
        let step = if start[i] != 0.0 { 0.05 * start[i] } else { 0.00025 };
        let mut v = start.to_vec();
        v[i] += step;
        if !opts.feasible(&v) {
            v[i] = start[i] - step;
        }
        opts.clip(&mut v);
        if v[i] == start[i] {
            return Err(OptimError::DegenerateSimplex);
        }
        points.push(v);
    }
    let values = points.iter().map(|p| counter.eval(p)).collect();
    Ok(Simplex { points, values })
}

fn affine(c: &[f64], w: &[f64], coef: f64, opts: &OptimOptions) -> Vec<f64> {
    let mut x: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + coef * (ci - wi)).collect();
    opts.clip(&mut x);
    x
}

/// Minimise `f` from `x0`. Restarts a fresh simplex at the incumbent until a
/// restart improves the best value by less than `tol_fun`.
pub fn nelder_mead_minimize<F>(
    mut f: F,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<OptimResult, OptimError>
where
    F: FnMut(&[f64]) -> f64,
{
    check_start(x0)?;
    let n = x0.len();
    opts.validate(n)?;
    let max_iters = opts.max_iters_for(n);
    let mut start = x0.to_vec();
    opts.clip(&mut start);

    let mut counter = Counter {
        f: &mut f,
        evaluations: 0,
    };
    let mut trace = Vec::new();
    let mut iters = 0;
    let mut best_point = start.clone();
    let mut best_value = f64::INFINITY;
    let mut termination = Termination::MaxIters;

    'restarts: for restart in 0..=MAX_RESTARTS {
        let mut simplex = initial_simplex(&best_point, opts, &mut counter)?;
        simplex.sort();
        loop {
            if simplex.spread() <= opts.tol_fun && simplex.diameter() <= opts.tol_x {
                break;
            }
            if iters >= max_iters {
                termination = Termination::MaxIters;
                if simplex.values[0] < best_value {
                    best_value = simplex.values[0];
                    best_point = simplex.points[0].clone();
                }
                break 'restarts;
            }
            iters += 1;
            nm_iteration(&mut simplex, opts, &mut counter);
            simplex.sort();
            trace.push(GenerationStats {
                best: simplex.values[0],
                median: median_of_sorted(&simplex.values),
            });
        }
        let improvement = best_value - simplex.values[0];
        if simplex.values[0] < best_value {
            best_value = simplex.values[0];
            best_point = simplex.points[0].clone();
        }
        if restart > 0 && !(improvement >= opts.tol_fun) {
            termination = if simplex.spread() <= opts.tol_fun {
                Termination::TolFun
            } else {
                Termination::TolX
            };
            break;
        }
        if best_value.is_infinite() {
            termination = Termination::TolFun;
            break;
        }
    }

    Ok(OptimResult {
        best_point,
        best_value,
        evaluations: counter.evaluations,
        generations: iters,
        trace,
        termination,
    })
}

fn nm_iteration<F: FnMut(&[f64]) -> f64>(
    s: &mut Simplex,
    opts: &OptimOptions,
    counter: &mut Counter<'_, F>,
) {
    let n = s.points.len() - 1;
    let mut centroid = vec![0.0; n];
    for p in &s.points[..n] {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / n as f64;
        }
    }
    let worst = s.points[n].clone();
    let f_best = s.values[0];
    let f_second = s.values[n - 1];
    let f_worst = s.values[n];

    let xr = affine(&centroid, &worst, REFLECT, opts);
    let fr = counter.eval(&xr);
    if fr < f_best {
        let xe = affine(&centroid, &worst, REFLECT * EXPAND, opts);
        let fe = counter.eval(&xe);
        if fe < fr {
            s.points[n] = xe;
            s.values[n] = fe;
        } else {
            s.points[n] = xr;
            s.values[n] = fr;
        }
        return;
    }
    if fr < f_second {
        s.points[n] = xr;
        s.values[n] = fr;
        return;
    }
    // Contraction: outside if the reflection helped at all, inside otherwise.
    let (xc, fc) = if fr < f_worst {
        let xc = affine(&centroid, &worst, REFLECT * CONTRACT, opts);
        let fc = counter.eval(&xc);
        (xc, fc)
    } else {
        let xc = affine(&centroid, &worst, -CONTRACT, opts);
        let fc = counter.eval(&xc);
        (xc, fc)
    };
    if fc < fr.min(f_worst) {
        s.points[n] = xc;
        s.values[n] = fc;
        return;
    }
    let best = s.points[0].clone();
    for i in 1..=n {
        let mut p: Vec<f64> = best
            .iter()
            .zip(&s.points[i])
            .map(|(b, v)| b + SHRINK * (v - b))
            .collect();
        opts.clip(&mut p);
        s.values[i] = counter.eval(&p);
        s.points[i] = p;
    }
}
