use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    pub max_evals: usize,
    pub simplex_tolerance: f64,
    /// Number of independent starts; start 0 is `x0` itself.
    pub restarts: usize,
    pub seed: u64,
    /// Edge length of the initial simplex, and jitter half-width for restarts.
    pub initial_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            simplex_tolerance: 1e-6,
            restarts: 1,
            seed: 0,
            initial_step: 0.5,
        }
    }
}

impl OptimizerOptions {
    fn validate(&self) -> Result<()> {
        if self.max_evals < 1 {
            return Err(Error::Domain("max_evals must be at least 1".into()));
        }
        if !(self.simplex_tolerance > 0.0) {
            return Err(Error::Domain("simplex_tolerance must be positive".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Domain("initial_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// True when the simplex spread criterion fired before `max_evals`.
    pub converged: bool,
    /// Index of the restart that produced the result.
    pub restart: usize,
}

/// Derivative-free minimization by the Nelder-Mead simplex method.
///
/// Non-finite objective values are treated as `+inf`, so constraints can be
/// expressed by returning `f64::INFINITY`. With several restarts the best
/// result wins, ties going to the lowest restart index.
pub fn nelder_mead<F>(objective: F, x0: &[f64], opts: &OptimizerOptions) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    opts.validate()?;
    if x0.is_empty() {
        return Err(Error::Domain("nelder_mead needs at least one dimension".into()));
    }
    if !objective(x0).is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let restarts = opts.restarts.max(1);
    let runs = parallel::map_range(restarts, |k| {
        let start = restart_point(x0, opts, k);
        let mut r = single_run(&objective, &start, opts);
        r.restart = k;
        r
    });
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.f < best.f { r } else { best })
        .expect("at least one restart");
    Ok(best)
}

fn restart_point(x0: &[f64], opts: &OptimizerOptions, k: usize) -> Vec<f64> {
    if k == 0 {
        return x0.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(parallel::derive_seed(opts.seed, k as u64));
    x0.iter()
        .map(|&v| v + opts.initial_step * rng.random_range(-1.0..=1.0))
        .collect()
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn single_run<F>(objective: &F, start: &[f64], opts: &OptimizerOptions) -> OptimizeResult
where
    F: Fn(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(objective(x))
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += opts.initial_step;
        let f = eval(&v);
        simplex.push((v, f));
    }

    let mut converged = false;
    loop {
        // Stable sort keeps earlier vertices first among ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_x, best_f) = (&simplex[0].0, simplex[0].1);
        let f_spread = simplex
            .iter()
            .map(|(_, f)| (f - best_f).abs())
            .fold(0.0, f64::max);
        let x_spread = simplex
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best_x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (f_spread <= opts.simplex_tolerance || f_spread.is_nan())
            && x_spread <= opts.simplex_tolerance
        {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = anchor
                .iter()
                .zip(&vertex.0)
                .map(|(a, v)| a + SHRINK * (v - a))
                .collect();
            let f = eval(&x);
            *vertex = (x, f);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    OptimizeResult {
        x,
        f,
        evals: evals.get(),
        converged,
        restart: 0,
    }
}
