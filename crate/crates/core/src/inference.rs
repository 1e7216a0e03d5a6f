//! Per-event conjugate posterior summaries and posterior-mode fitting of the
//! shared correlation hyperparameters.
//!
//! For event `j` with design `H` (rows `h(x_k)`), correlation `A = Sigma +
//! lambda2 I` and a normal inverse-gamma prior with `(a, b, B, d)`:
//!
//! ```text
//! B*      = (B^-1 + H^T A^-1 H)^-1
//! beta    = B* (B^-1 b + H^T A^-1 y)
//! sigma2  = (a + b^T B^-1 b + y^T A^-1 y - beta^T B*^-1 beta) / (K + d)
//! ```
//!
//! and the hyperparameter log-posterior under a flat prior is, up to a
//! constant, `sum_j -(K+d)/2 ln sigma2 - 1/2 ln|A| + 1/2 ln|B*|`.

use std::f64::consts::FRAC_PI_2;

use crate::covariance::{
    kernel_matrix, rotate_coords, CompositeKernel, Hyperparameters, KernelPoint, NU_MAX, NU_MIN,
};
use crate::dataio::{EventDataset, EventId, Observation};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, dot, nelder_mead, CholeskyFactor, DenseMatrix, OptimizerOptions};
use crate::parallel;

/// Lower bound applied to the per-event variance estimate.
pub const SIGMA2_FLOOR: f64 = 1e-10;

/// Conjugate prior on the regression coefficients and process variance,
/// plus the fixed measurement-error standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub b: Vec<f64>,
    pub b_cov: DenseMatrix,
    pub a: f64,
    pub d: f64,
    pub sigma_y: f64,
    pub basis_degree: usize,
}

impl Default for PriorSpec {
    /// Quadratic basis, `b = (0, 1, 0)`, `B = diag(0.1, 1, 1)`,
    /// `sigma_y = 3`, `a = d = 0`.
    fn default() -> Self {
        Self {
            b: vec![0.0, 1.0, 0.0],
            b_cov: DenseMatrix::from_diagonal(&[0.1, 1.0, 1.0]),
            a: 0.0,
            d: 0.0,
            sigma_y: 3.0,
            basis_degree: 2,
        }
    }
}

impl PriorSpec {
    pub fn q(&self) -> usize {
        self.basis_degree + 1
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if !(1..=3).contains(&q) {
            return Err(Error::Domain(format!(
                "basis degree must be 0, 1 or 2, got {}",
                self.basis_degree
            )));
        }
        if self.b.len() != q || self.b_cov.rows() != q || self.b_cov.cols() != q {
            return Err(Error::DimensionMismatch(format!(
                "prior mean/scale must have dimension {q}"
            )));
        }
        if !(self.a >= 0.0 && self.d >= 0.0) {
            return Err(Error::Domain("prior a and d must be non-negative".into()));
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return Err(Error::Domain("sigma_y must be positive".into()));
        }
        let f = cholesky(&self.b_cov)?;
        if f.jitter() > 0.0 {
            return Err(Error::NotPositiveDefinite { jitter: f.jitter() });
        }
        Ok(())
    }

    fn precision(&self) -> Result<(DenseMatrix, Vec<f64>, f64)> {
        let f = cholesky(&self.b_cov)?;
        let b_inv = f.inverse();
        let b_inv_b = f.solve(&self.b);
        let bbb = dot(&self.b, &b_inv_b);
        Ok((b_inv, b_inv_b, bbb))
    }
}

/// Regression basis `(1)`, `(1, x)` or `(1, x, x^2)`.
pub fn basis(x: f64, q: usize) -> Result<Vec<f64>> {
    match q {
        1 => Ok(vec![1.0]),
        2 => Ok(vec![1.0, x]),
        3 => Ok(vec![1.0, x, x * x]),
        _ => Err(Error::Domain(format!("unsupported basis size {q}"))),
    }
}

pub(crate) fn design_matrix(xs: &[f64], q: usize) -> Result<DenseMatrix> {
    let mut h = DenseMatrix::zeros(xs.len().max(1), q);
    for (i, &x) in xs.iter().enumerate() {
        h.row_mut(i).copy_from_slice(&basis(x, q)?);
    }
    Ok(h)
}

/// Transforms dataset locations into kernel points for event index `event`.
pub fn kernel_points(pairs: &[Observation], omega: f64, event: u32) -> Vec<KernelPoint> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, p)| KernelPoint {
            event,
            record: k as u64,
            location: rotate_coords(p.location, omega),
            intensity: p.x,
        })
        .collect()
}

/// Posterior summaries for one event at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct EventFit {
    pub event: EventId,
    pub index: u32,
    pub observations: Vec<Observation>,
    pub threshold: f64,
    pub points: Vec<KernelPoint>,
    pub y: Vec<f64>,
    pub h: DenseMatrix,
    pub a_factor: CholeskyFactor,
    /// `L^{-1} H` with `L L^T = A`.
    pub whitened_h: DenseMatrix,
    pub b_star: DenseMatrix,
    pub ln_det_b_star: f64,
    pub beta_hat: Vec<f64>,
    pub sigma_hat2: f64,
    /// True when the variance estimate was clamped to [`SIGMA2_FLOOR`].
    pub sigma_floored: bool,
    /// `A^{-1} (y - H beta)`.
    pub weights: Vec<f64>,
    pub k: usize,
    /// `K + d`.
    pub df: f64,
}

impl EventFit {
    /// This event's contribution to the hyperparameter log-posterior.
    pub fn log_posterior_term(&self) -> f64 {
        -0.5 * self.df * self.sigma_hat2.ln() - 0.5 * self.a_factor.logdet() + 0.5 * self.ln_det_b_star
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.y
            .iter()
            .enumerate()
            .map(|(k, y)| y - dot(self.h.row(k), &self.beta_hat))
            .collect()
    }

    pub fn q(&self) -> usize {
        self.beta_hat.len()
    }
}

/// Conjugate update for one event.
pub fn event_statistics(data: &EventDataset, theta: &Hyperparameters, prior: &PriorSpec) -> Result<EventFit> {
    event_statistics_indexed(data, 0, theta, prior)
}

pub(crate) fn event_statistics_indexed(
    data: &EventDataset,
    index: u32,
    theta: &Hyperparameters,
    prior: &PriorSpec,
) -> Result<EventFit> {
    let kernel = CompositeKernel::new(theta)?;
    let (b_inv, b_inv_b, bbb) = prior.precision()?;
    event_statistics_with(data, index, theta, prior, &kernel, &b_inv, &b_inv_b, bbb)
}

#[allow(clippy::too_many_arguments)]
fn event_statistics_with(
    data: &EventDataset,
    index: u32,
    theta: &Hyperparameters,
    prior: &PriorSpec,
    kernel: &CompositeKernel,
    b_inv: &DenseMatrix,
    b_inv_b: &[f64],
    bbb: f64,
) -> Result<EventFit> {
    let q = prior.q();
    let k = data.pairs.len();
    if k <= q {
        return Err(Error::TooFewObservations {
            event: data.event.to_string(),
            count: k,
            required: q,
        });
    }
    let points = kernel_points(&data.pairs, theta.omega, index);
    let y = data.y();
    let h = design_matrix(&data.x(), q)?;
    let a = kernel_matrix(kernel, &points, true);
    let a_factor = cholesky(&a)?;

    // Z = L^-1 H, w = L^-1 y.
    let mut whitened_h = DenseMatrix::zeros(k, q);
    for c in 0..q {
        let col = a_factor.solve_lower(&h.column(c));
        for (r, v) in col.into_iter().enumerate() {
            whitened_h[(r, c)] = v;
        }
    }
    let w = a_factor.solve_lower(&y);

    let mut precision = b_inv.clone();
    let mut rhs = b_inv_b.to_vec();
    for r in 0..k {
        let zr = whitened_h.row(r);
        for i in 0..q {
            rhs[i] += zr[i] * w[r];
            for j in 0..q {
                precision[(i, j)] += zr[i] * zr[j];
            }
        }
    }
    precision.symmetrize();
    let p_factor = cholesky(&precision)?;
    let beta_hat = p_factor.solve(&rhs);
    let b_star = p_factor.inverse();

    let quad = bbb + dot(&w, &w) - dot(&beta_hat, &rhs);
    let df = k as f64 + prior.d;
    let raw = (prior.a + quad) / df;
    let sigma_floored = !(raw > SIGMA2_FLOOR);
    let sigma_hat2 = if sigma_floored { SIGMA2_FLOOR } else { raw };

    let resid: Vec<f64> = (0..k).map(|r| y[r] - dot(h.row(r), &beta_hat)).collect();
    let weights = a_factor.solve(&resid);

    Ok(EventFit {
        event: data.event.clone(),
        index,
        observations: data.pairs.clone(),
        threshold: data.threshold,
        points,
        y,
        h,
        a_factor,
        whitened_h,
        b_star,
        ln_det_b_star: -p_factor.logdet(),
        beta_hat,
        sigma_hat2,
        sigma_floored,
        weights,
        k,
        df,
    })
}

/// Log-posterior of the hyperparameters (flat prior), up to a constant.
///
/// Returns `-inf` when any event's correlation matrix cannot be factorized
/// or its variance estimate hits the floor.
pub fn log_posterior_theta(datasets: &[EventDataset], theta: &Hyperparameters, prior: &PriorSpec) -> Result<f64> {
    for d in datasets {
        if d.len() <= prior.q() {
            return Err(Error::TooFewObservations {
                event: d.event.to_string(),
                count: d.len(),
                required: prior.q(),
            });
        }
    }
    let kernel = CompositeKernel::new(theta)?;
    let (b_inv, b_inv_b, bbb) = prior.precision()?;
    Ok(log_posterior_with(datasets, theta, prior, &kernel, &b_inv, &b_inv_b, bbb))
}

fn log_posterior_with(
    datasets: &[EventDataset],
    theta: &Hyperparameters,
    prior: &PriorSpec,
    kernel: &CompositeKernel,
    b_inv: &DenseMatrix,
    b_inv_b: &[f64],
    bbb: f64,
) -> f64 {
    let terms = parallel::map_range(datasets.len(), |j| {
        match event_statistics_with(&datasets[j], j as u32, theta, prior, kernel, b_inv, b_inv_b, bbb) {
            Ok(fit) if !fit.sigma_floored => fit.log_posterior_term(),
            _ => f64::NEG_INFINITY,
        }
    });
    // Fixed summation order keeps the value bit-stable across execution modes.
    terms.into_iter().sum()
}

/// Optimizer coordinates: `omega, ln lambda2, ln phi1, ln phi2, ln nu1,
/// ln nu2, ln phi_x`.
pub fn theta_to_params(theta: &Hyperparameters) -> Vec<f64> {
    vec![
        theta.omega,
        theta.lambda2.ln(),
        theta.phi1.ln(),
        theta.phi2.ln(),
        theta.nu1.ln(),
        theta.nu2.ln(),
        theta.phi_x.ln(),
    ]
}

/// Inverse of [`theta_to_params`]; `None` when smoothness leaves its bounds.
pub fn params_to_theta(p: &[f64]) -> Option<Hyperparameters> {
    let theta = Hyperparameters {
        omega: Hyperparameters::wrap_omega(p[0]),
        lambda2: p[1].exp(),
        phi1: p[2].exp(),
        phi2: p[3].exp(),
        nu1: p[4].exp(),
        nu2: p[5].exp(),
        phi_x: p[6].exp(),
    };
    let nu_ok = |nu: f64| (NU_MIN..=NU_MAX).contains(&nu);
    if !(nu_ok(theta.nu1) && nu_ok(theta.nu2)) {
        return None;
    }
    theta.validate().ok().map(|_| theta)
}

/// Starting point: ranges at 20% of the station-domain diagonal, `nu = 1.5`,
/// `lambda2 = 0.1`, `omega = 0`, and an intensity range of half the spread of
/// simulated values.
pub fn default_theta0(datasets: &[EventDataset]) -> Hyperparameters {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut xlo, mut xhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in datasets.iter().flat_map(|d| &d.pairs) {
        lo = (lo.0.min(p.location.0), lo.1.min(p.location.1));
        hi = (hi.0.max(p.location.0), hi.1.max(p.location.1));
        xlo = xlo.min(p.x);
        xhi = xhi.max(p.x);
    }
    let diag = (hi.0 - lo.0).hypot(hi.1 - lo.1);
    let range = if diag.is_finite() && diag > 0.0 { 0.2 * diag } else { 1.0 };
    let phi_x = if xhi > xlo { 0.5 * (xhi - xlo) } else { 1.0 };
    Hyperparameters {
        omega: 0.0,
        lambda2: 0.1,
        phi1: range,
        phi2: range,
        nu1: 1.5,
        nu2: 1.5,
        phi_x,
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub theta0: Option<Hyperparameters>,
    pub optimizer: OptimizerOptions,
}

/// A fitted model: the posterior-mode hyperparameters and every event's
/// conjugate summaries at that mode.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub theta: Hyperparameters,
    pub events: Vec<EventFit>,
    pub prior: PriorSpec,
    pub log_posterior: f64,
    pub evaluations: usize,
}

impl ModelFit {
    /// Builds the per-event summaries at fixed hyperparameters.
    pub fn at_theta(datasets: &[EventDataset], theta: Hyperparameters, prior: PriorSpec) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Domain("at least one event is required".into()));
        }
        prior.validate()?;
        theta.validate()?;
        let events = parallel::map_range(datasets.len(), |j| {
            event_statistics_indexed(&datasets[j], j as u32, &theta, &prior)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let log_posterior = events
            .iter()
            .map(|e| {
                if e.sigma_floored {
                    f64::NEG_INFINITY
                } else {
                    e.log_posterior_term()
                }
            })
            .sum();
        Ok(Self {
            theta,
            events,
            prior,
            log_posterior,
            evaluations: 0,
        })
    }

    pub fn event(&self, id: &EventId) -> Result<&EventFit> {
        self.events
            .iter()
            .find(|e| &e.event == id)
            .ok_or_else(|| Error::UnknownEvent(id.to_string()))
    }

    pub fn datasets(&self) -> Vec<EventDataset> {
        self.events
            .iter()
            .map(|e| EventDataset {
                event: e.event.clone(),
                pairs: e.observations.clone(),
                threshold: e.threshold,
            })
            .collect()
    }

    /// Events whose fitted nugget cannot accommodate the measurement error,
    /// i.e. `lambda2 * sigma2 < sigma_y^2`, with the implied nugget variance.
    pub fn nugget_warnings(&self) -> Vec<(EventId, f64)> {
        let sy2 = self.prior.sigma_y * self.prior.sigma_y;
        self.events
            .iter()
            .filter_map(|e| {
                let nugget = self.theta.lambda2 * e.sigma_hat2;
                (nugget < sy2).then(|| (e.event.clone(), nugget))
            })
            .collect()
    }
}

/// Finds the posterior mode of the hyperparameters numerically.
///
/// Runs Nelder-Mead with the configured restarts and then one polishing run
/// from the best point, which re-expands a collapsed simplex.
pub fn fit_model(datasets: &[EventDataset], prior: &PriorSpec, options: &FitOptions) -> Result<ModelFit> {
    if datasets.is_empty() {
        return Err(Error::Domain("at least one event is required".into()));
    }
    prior.validate()?;
    for d in datasets {
        if d.len() <= prior.q() {
            return Err(Error::TooFewObservations {
                event: d.event.to_string(),
                count: d.len(),
                required: prior.q(),
            });
        }
    }
    let theta0 = options.theta0.unwrap_or_else(|| default_theta0(datasets));
    theta0.validate()?;
    let (b_inv, b_inv_b, bbb) = prior.precision()?;
    let objective = |p: &[f64]| -> f64 {
        let Some(theta) = params_to_theta(p) else {
            return f64::INFINITY;
        };
        let Ok(kernel) = CompositeKernel::new(&theta) else {
            return f64::INFINITY;
        };
        -log_posterior_with(datasets, &theta, prior, &kernel, &b_inv, &b_inv_b, bbb)
    };
    let x0 = theta_to_params(&theta0);
    let first = nelder_mead(objective, &x0, &options.optimizer)?;
    let polish_opts = OptimizerOptions {
        restarts: 1,
        initial_step: options.optimizer.initial_step * 0.25,
        ..options.optimizer.clone()
    };
    let polished = nelder_mead(objective, &first.x, &polish_opts)?;
    let best = if polished.f <= first.f { polished.x.clone() } else { first.x.clone() };
    let evaluations = first.evals + polished.evals;
    let theta = params_to_theta(&best).ok_or_else(|| Error::Domain("optimizer left the feasible region".into()))?;
    debug_assert!(theta.omega > -FRAC_PI_2 && theta.omega <= FRAC_PI_2);
    log::info!(
        "posterior mode after {evaluations} evaluations: log posterior {:.6}",
        -first.f.min(polished.f)
    );
    let mut fit = ModelFit::at_theta(datasets, theta, prior.clone())?;
    fit.evaluations = evaluations;
    Ok(fit)
}
